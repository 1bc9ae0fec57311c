"""Exact modular matrix multiplication through small-residue GEMMs.

A matrix modulo Q = prod p_i^e_i is split into its residues modulo each p_i^e_i.
Residues modulo p^2 are further written as M0 + p*M1 with centered digits, so
each product modulo p^2 needs three digit GEMMs (A0B0, A0B1, A1B0) whose
accumulators stay inside signed 32-bit range.  The digit GEMMs run as float64
BLAS calls, which are exact because every partial sum is below 2^31 < 2^53.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sympy import primerange

from .errors import AccumulationOverflowRisk, ModulusTooLarge

INT32_LIMIT = 2**31
SMALL_LIMIT = 2**8


@dataclass(frozen=True)
class RnsBasis:
    """Ordered coprime moduli p^e with every p < 2^8."""

    moduli: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.moduli:
            raise ValueError("empty basis")
        for p, e in self.moduli:
            if e not in (1, 2):
                raise ValueError("exponent must be 1 or 2")
            if p >= SMALL_LIMIT:
                raise ModulusTooLarge(f"prime {p} does not fit 8 bits")
        ps = [p for p, _ in self.moduli]
        if len(set(ps)) != len(ps):
            raise ValueError("moduli must be pairwise coprime")

    @property
    def values(self) -> list[int]:
        return [p**e for p, e in self.moduli]

    @property
    def Q(self) -> int:
        return math.prod(self.values)

    @property
    def log2_Q(self) -> float:
        return sum(e * math.log2(p) for p, e in self.moduli)

    @property
    def digit_planes(self) -> int:
        """Number of small-digit matrices needed to store one matrix mod Q."""
        return sum(e for _, e in self.moduli)


def build_paper_basis() -> RnsBasis:
    """All primes 127 <= p <= 253, each squared."""
    return RnsBasis(tuple((p, 2) for p in primerange(127, 254)))


def int8_exponent(p: int) -> int:
    """Largest e with p^e < 2^8."""
    e = 0
    while p ** (e + 1) < SMALL_LIMIT:
        e += 1
    return e


def max_int8_rns_basis() -> list[int]:
    """Maximal pure-RNS moduli p^floor(log_p 256) over odd primes p <= 253."""
    return [p ** int8_exponent(p) for p in primerange(3, 254)]


def max_int8_rns_capacity() -> float:
    """log2 of the largest modulus a pure int8 RNS basis can represent."""
    return sum(math.log2(q) for q in max_int8_rns_basis())


def pure_rns_plane_count(target_log2: float) -> tuple[int, bool]:
    """Planes needed by pure int8 RNS to reach target_log2 bits.

    Moduli are taken greedily from the largest; returns (count, reached).  When
    the whole basis falls short the full count is returned with reached=False.
    """
    acc, count = 0.0, 0
    for q in sorted(max_int8_rns_basis(), reverse=True):
        if acc >= target_log2:
            break
        acc += math.log2(q)
        count += 1
    return count, acc >= target_log2


# --- digit layer ---------------------------------------------------------

def centered(x: np.ndarray, n: int) -> np.ndarray:
    """Representative of x mod n in [-(n-1)/2, (n-1)/2] (n odd)."""
    r = np.mod(x, n)
    return np.where(r > n // 2, r - n, r)


@dataclass(frozen=True, eq=False)
class DigitMatrices:
    """M = M0 + p*M1 (mod p^2) with centered int8 digits."""

    p: int
    low: np.ndarray
    high: np.ndarray

    def recompose(self) -> np.ndarray:
        n = self.p * self.p
        return np.mod(self.low.astype(np.int64) + self.p * self.high.astype(np.int64), n)


def digit_decompose(M, p: int) -> DigitMatrices:
    if p >= SMALL_LIMIT:
        raise ModulusTooLarge(f"p={p} must be below 2^8")
    if p % 2 == 0:
        raise ValueError("p must be odd")
    M = np.asarray(M, dtype=np.int64)
    low = centered(M, p)
    high = centered((M - low) // p, p)
    lo8, hi8 = low.astype(np.int8), high.astype(np.int8)
    lo8.setflags(write=False)
    hi8.setflags(write=False)
    return DigitMatrices(p, lo8, hi8)


def check_accumulation(k: int, digit_bound: int) -> None:
    """Raise unless k products of digits bounded by digit_bound fit int32."""
    if k * digit_bound * digit_bound >= INT32_LIMIT:
        raise AccumulationOverflowRisk(
            f"inner dimension {k} with digits up to {digit_bound} can overflow int32")


def small_gemm(A, B, digit_bound: int | None = None) -> np.ndarray:
    """int8 x int8 -> int32 product with a checked accumulation bound."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ValueError(f"non-conformable shapes {A.shape} x {B.shape}")
    if digit_bound is None:
        digit_bound = int(max(np.abs(A).max(initial=0), np.abs(B).max(initial=0)))
    check_accumulation(A.shape[1], digit_bound)
    out = A.astype(np.float64) @ B.astype(np.float64)
    return out.astype(np.int32)


def gemm_mod_psq(A, B, p: int, counter: list | None = None) -> np.ndarray:
    """Product modulo p^2 from three digit GEMMs."""
    n = p * p
    da = digit_decompose(np.mod(np.asarray(A, dtype=np.int64), n), p)
    db = digit_decompose(np.mod(np.asarray(B, dtype=np.int64), n), p)
    bound = (p - 1) // 2
    calls = [(da.low, db.low), (da.low, db.high), (da.high, db.low)]
    prods = [small_gemm(x, y, bound).astype(np.int64) for x, y in calls]
    if counter is not None:
        counter.append(len(calls))
    # the A1*B1 term carries p^2 and vanishes
    return np.mod(prods[0] + p * np.mod(prods[1] + prods[2], p), n)


def gemm_mod_small(A, B, q: int) -> np.ndarray:
    """Product modulo a small modulus q < 2^8 from one digit GEMM."""
    a = centered(np.asarray(A, dtype=np.int64), q)
    b = centered(np.asarray(B, dtype=np.int64), q)
    return np.mod(small_gemm(a, b, q // 2).astype(np.int64), q)


# --- big matrices --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BigMatrix:
    """Matrix of arbitrary-precision residues in [0, Q)."""

    entries: np.ndarray  # dtype=object holding Python ints
    Q: int

    def __post_init__(self):
        e = np.array(self.entries, dtype=object)
        if e.ndim != 2:
            raise ValueError("BigMatrix needs a 2-D entry array")
        e = np.mod(e, self.Q)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def __eq__(self, other):
        if not isinstance(other, BigMatrix):
            return NotImplemented
        return self.Q == other.Q and self.entries.shape == other.entries.shape and \
            bool((self.entries == other.entries).all())

    @classmethod
    def random(cls, rows: int, cols: int, Q: int, rng: np.random.Generator) -> "BigMatrix":
        nbytes = (Q.bit_length() + 7) // 8 + 8
        raw = rng.bytes(rows * cols * nbytes)
        vals = [int.from_bytes(raw[i * nbytes:(i + 1) * nbytes], "little") % Q
                for i in range(rows * cols)]
        return cls(np.array(vals, dtype=object).reshape(rows, cols), Q)

    @classmethod
    def identity(cls, n: int, Q: int) -> "BigMatrix":
        e = np.zeros((n, n), dtype=object)
        for i in range(n):
            e[i, i] = 1
        return cls(e, Q)

    @classmethod
    def zeros(cls, rows: int, cols: int, Q: int) -> "BigMatrix":
        return cls(np.zeros((rows, cols), dtype=object) * 0, Q)


def oracle_gemm_mod_Q(A: BigMatrix, B: BigMatrix, Q: int) -> BigMatrix:
    """Schoolbook arbitrary-precision product reduced mod Q."""
    if A.cols != B.rows:
        raise ValueError("non-conformable matrices")
    out = np.empty((A.rows, B.cols), dtype=object)
    for i in range(A.rows):
        row = A.entries[i]
        for j in range(B.cols):
            out[i, j] = sum(int(x) * int(y) for x, y in zip(row, B.entries[:, j])) % Q
    return BigMatrix(out, Q)


def to_residues(M: BigMatrix, basis: RnsBasis) -> list[np.ndarray]:
    return [np.mod(M.entries, q).astype(np.int64) for q in basis.values]


def crt_recombine(residues: Sequence[np.ndarray], basis: RnsBasis) -> np.ndarray:
    """Recombine per-modulus residues with precomputed (Q/q)*((Q/q)^-1 mod q)."""
    Q = basis.Q
    acc = np.zeros(residues[0].shape, dtype=object)
    for r, q in zip(residues, basis.values):
        Mi = Q // q
        acc = acc + r.astype(object) * (Mi * pow(Mi, -1, q))
    return np.mod(acc, Q)


def gemm_mod_Q(A: BigMatrix, B: BigMatrix, basis: RnsBasis,
               executor: Executor | None = None, counter: list | None = None) -> BigMatrix:
    """Product modulo Q = basis.Q via per-modulus digit GEMMs and CRT.

    Per-modulus products are independent; pass an executor to run them in
    parallel workers.
    """
    if A.cols != B.rows:
        raise ValueError("non-conformable matrices")
    if A.Q != basis.Q or B.Q != basis.Q:
        raise ValueError("matrix modulus differs from basis modulus")
    ra, rb = to_residues(A, basis), to_residues(B, basis)

    def one(i):
        p, e = basis.moduli[i]
        if e == 2:
            return gemm_mod_psq(ra[i], rb[i], p, counter)
        return gemm_mod_small(ra[i], rb[i], p)

    idx = range(len(basis.moduli))
    prods = list(executor.map(one, idx)) if executor else [one(i) for i in idx]
    return BigMatrix(crt_recombine(prods, basis), basis.Q)


# --- file format ---------------------------------------------------------

def entry_width(Q: int) -> int:
    """Bytes per entry: ceil(log_256 Q)."""
    return max(1, ((Q - 1).bit_length() + 7) // 8)


def write_matrix(path, M: BigMatrix) -> None:
    """JSON header line {rows, cols, Q} then fixed-width little-endian entries."""
    w = entry_width(M.Q)
    header = json.dumps({"rows": M.rows, "cols": M.cols, "Q": str(M.Q)})
    with open(path, "wb") as fh:
        fh.write(header.encode() + b"\n")
        for v in M.entries.ravel():
            fh.write(int(v).to_bytes(w, "little"))


def read_matrix(path) -> BigMatrix:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        body = fh.read()
    rows, cols, Q = header["rows"], header["cols"], int(header["Q"])
    w = entry_width(Q)
    if len(body) != rows * cols * w:
        raise ValueError("matrix file size does not match header")
    vals = [int.from_bytes(body[i * w:(i + 1) * w], "little") for i in range(rows * cols)]
    return BigMatrix(np.array(vals, dtype=object).reshape(rows, cols), Q)
