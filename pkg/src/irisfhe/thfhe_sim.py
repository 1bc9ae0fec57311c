"""Toy threshold decryption: Shamir-shared keys, masked partial shares, flooding.

Everything lives in Z_q[X]/(X^N + 1) with q a prime larger than the number of
parties, so that every Lagrange coefficient exists.  A ciphertext (a, b)
satisfies a*sk + b = Delta*mu + e (mod q).  Coefficients are Python integers
held in object arrays, which keeps q up to 2^128 exact.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from sympy import isprime, prevprime

from .errors import BadThreshold, ConfigError, RoundingAmbiguity, UnknownParticipant

MAX_LOG_N = 10
MAX_Q_BITS = 128
TAIL_CUT = 12           # flooding samples are cut at 12 sigma
PRF_EXTRA_BYTES = 8     # 64 spare bits make the reduction mod q statistically uniform


def flooding_gap_bits(log_N: int, lam: int, log_t: int) -> int:
    """Bits between the noise bound B_e and Delta: log N + lambda/2 + log t."""
    return int(log_N + math.ceil(lam / 2) + log_t)


def flood_std_bits(log_Be: int, log_N: int, lam: int) -> int:
    """log2 of the flooding deviation 2^(lambda/2) * B_e * N."""
    return int(math.ceil(lam / 2) + log_Be + log_N)


def required_delta_bits(log_Be: int, log_N: int, lam: int, t: int) -> int:
    """Smallest Delta = 2^bits with B_e + t * TAIL_CUT * sigma < Delta / 2.

    This is flooding_gap_bits plus the constants the asymptotic gap leaves out
    (the tail cut and the factor 2 of rounding); for t a power of two it
    exceeds the gap by 5 bits.
    """
    bound = 2 ** log_Be + t * TAIL_CUT * 2 ** flood_std_bits(log_Be, log_N, lam)
    return int((2 * bound).bit_length())


def toy_prime(bits: int) -> int:
    """Largest prime below 2^bits."""
    return int(prevprime(2 ** bits))


@dataclass(frozen=True)
class ToyRing:
    N: int
    q: int

    def __post_init__(self):
        if self.N < 1 or self.N & (self.N - 1) or self.N > 2 ** MAX_LOG_N:
            raise ConfigError(f"ring degree must be a power of two <= 2^{MAX_LOG_N}")
        if self.q < 3 or self.q.bit_length() > MAX_Q_BITS:
            raise ConfigError(f"modulus must be in [3, 2^{MAX_Q_BITS}]")

    def element(self, coeffs) -> "ToyRingElement":
        c = np.array([int(v) % self.q for v in coeffs], dtype=object)
        if c.size != self.N:
            raise ValueError(f"need {self.N} coefficients, got {c.size}")
        return ToyRingElement(self, c)

    def zero(self) -> "ToyRingElement":
        return self.element([0] * self.N)

    def uniform(self, rng: np.random.Generator) -> "ToyRingElement":
        # 64-bit limbs with extra headroom, reduced mod q
        limbs = (self.q.bit_length() + 64) // 64 + 1
        raw = rng.integers(0, 2 ** 63, size=(self.N, limbs), dtype=np.int64)
        vals = [sum(int(x) << (63 * k) for k, x in enumerate(row)) for row in raw]
        return self.element(vals)

    def small(self, rng: np.random.Generator, bound: int) -> "ToyRingElement":
        return self.element(rng.integers(-bound, bound + 1, self.N))

    def ternary(self, rng: np.random.Generator) -> "ToyRingElement":
        return self.small(rng, 1)


@dataclass(frozen=True, eq=False)
class ToyRingElement:
    ring: ToyRing
    coeffs: np.ndarray

    def _check(self, other: "ToyRingElement"):
        if other.ring != self.ring:
            raise ValueError("elements live in different rings")

    def __add__(self, other):
        self._check(other)
        return ToyRingElement(self.ring, (self.coeffs + other.coeffs) % self.ring.q)

    def __sub__(self, other):
        self._check(other)
        return ToyRingElement(self.ring, (self.coeffs - other.coeffs) % self.ring.q)

    def __neg__(self):
        return ToyRingElement(self.ring, (-self.coeffs) % self.ring.q)

    def scale(self, c: int) -> "ToyRingElement":
        return ToyRingElement(self.ring, (self.coeffs * int(c)) % self.ring.q)

    def __mul__(self, other):
        if isinstance(other, (int, np.integer)):
            return self.scale(int(other))
        self._check(other)
        # negacyclic product: row i of the matrix is X^i * other
        N = self.ring.N
        M = np.empty((N, N), dtype=object)
        row = other.coeffs.copy()
        for i in range(N):
            M[i] = row
            row = np.concatenate([[-row[-1]], row[:-1]])
        return ToyRingElement(self.ring, np.dot(self.coeffs, M) % self.ring.q)

    __rmul__ = __mul__

    def __eq__(self, other):
        return (isinstance(other, ToyRingElement) and other.ring == self.ring
                and all(int(a) == int(b) for a, b in zip(self.coeffs, other.coeffs)))

    def centered(self) -> list[int]:
        q = self.ring.q
        return [int(c) - q if int(c) > q // 2 else int(c) for c in self.coeffs]

    def to_bytes(self) -> bytes:
        w = (self.ring.q.bit_length() + 7) // 8
        return b"".join(int(c).to_bytes(w, "little") for c in self.coeffs)

    @property
    def size_bytes(self) -> int:
        return self.ring.N * ((self.ring.q.bit_length() + 7) // 8)


# --- key sharing --------------------------------------------------------------

def lagrange_coefficients(participants, q: int) -> list[int]:
    """lambda_j = prod_{m != j} x_m / (x_m - x_j) mod q, evaluation points x = party index."""
    xs = [int(i) for i in participants]
    if len(set(xs)) != len(xs):
        raise UnknownParticipant("participants must be distinct")
    out = []
    for j, xj in enumerate(xs):
        num, den = 1, 1
        for m, xm in enumerate(xs):
            if m != j:
                num = num * xm % q
                den = den * (xm - xj) % q
        out.append(num * pow(den, -1, q) % q)
    return out


@dataclass
class SharedKey:
    ring: ToyRing
    n: int
    t: int
    shares: dict          # party index (1..n) -> ToyRingElement

    def lagrange(self, participants) -> list[int]:
        self.check(participants)
        return lagrange_coefficients(participants, self.ring.q)

    def check(self, participants):
        bad = [i for i in participants if i not in self.shares]
        if bad:
            raise UnknownParticipant(f"unknown parties {bad}")
        if len(participants) != self.t:
            raise UnknownParticipant(f"need exactly t={self.t} participants, got {len(participants)}")

    def reconstruct(self, participants) -> ToyRingElement:
        acc = self.ring.zero()
        for lam, i in zip(self.lagrange(participants), participants):
            acc = acc + self.shares[i].scale(lam)
        return acc


def share_secret(sk: ToyRingElement, n: int, t: int, seed: int) -> SharedKey:
    """Coefficient-wise Shamir sharing with threshold t among parties 1..n."""
    ring = sk.ring
    if not 2 <= t <= n:
        raise BadThreshold(f"need 2 <= t <= n, got t={t}, n={n}")
    if not isprime(ring.q) or ring.q <= n:
        raise BadThreshold("Lagrange coefficients need a prime modulus larger than n")
    rng = np.random.default_rng(seed)
    poly = [sk] + [ring.uniform(rng) for _ in range(t - 1)]
    shares = {}
    for i in range(1, n + 1):
        acc = ring.zero()
        for c in reversed(poly):         # Horner in the evaluation point i
            acc = acc.scale(i) + c
        shares[i] = acc
    return SharedKey(ring, n, t, shares)


# --- PRF masks -------------------------------------------------------------------

def pairwise_keys(n: int, seed: int) -> dict:
    """Independent 32-byte keys k[(i, j)] for every ordered pair i != j."""
    rng = np.random.default_rng(seed)
    return {(i, j): rng.bytes(32) for i in range(1, n + 1) for j in range(1, n + 1) if i != j}


def ct_digest(a: ToyRingElement, b: ToyRingElement) -> bytes:
    return hashlib.sha256(a.to_bytes() + b.to_bytes()).digest()


def prf(key: bytes, digest: bytes, ring: ToyRing) -> ToyRingElement:
    """F_k(ct): SHAKE-256 stream keyed by (k, hash(ct)), reduced mod q."""
    w = (ring.q.bit_length() + 7) // 8 + PRF_EXTRA_BYTES
    stream = hashlib.shake_256(key + digest).digest(w * ring.N)
    return ring.element(int.from_bytes(stream[i * w:(i + 1) * w], "little") for i in range(ring.N))


# --- decryption ----------------------------------------------------------------

@dataclass
class DecryptionShare:
    party: int
    share: ToyRingElement


def flooding_noise(ring: ToyRing, std_bits: float, rng: np.random.Generator) -> ToyRingElement:
    """Rounded Gaussian of deviation 2^std_bits, cut at TAIL_CUT sigma."""
    z = rng.standard_normal(ring.N)
    z = np.clip(z, -TAIL_CUT, TAIL_CUT)
    return ring.element(round(float(v) * 2.0 ** std_bits) for v in z)


def partial_decrypt(a: ToyRingElement, b: ToyRingElement, key: SharedKey, party: int,
                    participants, flood_std_bits: float | None, prf_keys: dict | None,
                    rng: np.random.Generator) -> DecryptionShare:
    """sh = lambda_j a sk_j + e_j + sum_j' (F_{k_{j j'}}(ct) - F_{k_{j' j}}(ct))."""
    participants = list(participants)
    if party not in participants:
        raise UnknownParticipant(f"party {party} is not among the participants")
    lam = key.lagrange(participants)[participants.index(party)]
    sh = (a * key.shares[party]).scale(lam)
    if flood_std_bits is not None:
        sh = sh + flooding_noise(a.ring, flood_std_bits, rng)
    if prf_keys is not None:
        dig = ct_digest(a, b)
        for other in participants:
            if other != party:
                sh = sh + prf(prf_keys[(party, other)], dig, a.ring) - prf(prf_keys[(other, party)], dig, a.ring)
    return DecryptionShare(party, sh)


def combine(b: ToyRingElement, shares) -> ToyRingElement:
    """b + sum of shares (the linear part of final decryption)."""
    acc = b
    for s in shares:
        acc = acc + (s.share if isinstance(s, DecryptionShare) else s)
    return acc


def final_decrypt(b: ToyRingElement, shares, scale_bits: int,
                  noise_bound: int | None = None) -> np.ndarray:
    """Round (b + sum sh) / Delta to the plaintext coefficients.

    With a noise bound, refuses when |noise| < Delta / 2 is not guaranteed.
    """
    delta = 2 ** scale_bits
    if noise_bound is not None and 2 * noise_bound >= delta:
        raise RoundingAmbiguity(f"noise bound 2^{math.log2(noise_bound):.1f} reaches Delta/2")
    v = combine(b, shares).centered()
    out = []
    for c in v:
        mu, r = divmod(c, delta)
        if 2 * r == delta:
            raise RoundingAmbiguity("coefficient lies exactly between two plaintexts")
        out.append(mu + (2 * r > delta))
    return np.array(out, dtype=np.int64)


def encrypt(sk: ToyRingElement, mu, scale_bits: int, noise: ToyRingElement,
            rng: np.random.Generator) -> tuple[ToyRingElement, ToyRingElement]:
    """(a, b) with a*sk + b = Delta*mu + e."""
    ring = sk.ring
    a = ring.uniform(rng)
    m = ring.element(int(v) * 2 ** scale_bits for v in mu)
    return a, m + noise - a * sk


# --- demo -------------------------------------------------------------------------

@dataclass
class ThFheParams:
    n: int = 3
    t: int = 2
    log_N: int = 4
    lam: int = 128
    log_Be: int = 4
    delta_bits: int | None = None    # None: required_delta_bits
    q_bits: int | None = None        # None: delta_bits + 3

    def __post_init__(self):
        if not 2 <= self.t <= self.n:
            raise BadThreshold(f"need 2 <= t <= n, got t={self.t}, n={self.n}")
        if not 0 <= self.log_N <= MAX_LOG_N:
            raise ConfigError(f"toy ring degree is limited to 2^{MAX_LOG_N}")

    @property
    def log_t(self) -> int:
        return math.ceil(math.log2(self.t))

    @property
    def flood_bits(self) -> int:
        return flood_std_bits(self.log_Be, self.log_N, self.lam)

    @property
    def scale_bits(self) -> int:
        if self.delta_bits is not None:
            return self.delta_bits
        return required_delta_bits(self.log_Be, self.log_N, self.lam, self.t)

    @property
    def modulus_bits(self) -> int:
        return self.q_bits if self.q_bits is not None else self.scale_bits + 3

    def noise_bound(self) -> int:
        return 2 ** self.log_Be + self.t * TAIL_CUT * 2 ** self.flood_bits


@dataclass
class Transcript:
    params: dict
    q: int
    participants: list
    share_bytes: int
    ciphertext_bytes: int
    gap_bits: int
    delta_over_Be_bits: int
    gap_ok: bool
    trials: int
    failures: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["q"] = str(self.q)
        return json.dumps(d, indent=1)


def round_trips(p: ThFheParams, trials: int, seed: int, participants=None,
                flooding: bool = True, use_prf: bool = True) -> Transcript:
    """Share a key, then encrypt / partially decrypt / combine `trials` random bit vectors."""
    rng = np.random.default_rng(seed)
    ring = ToyRing(2 ** p.log_N, toy_prime(p.modulus_bits))
    sk = ring.ternary(rng)
    key = share_secret(sk, p.n, p.t, int(rng.integers(2 ** 62)))
    keys = pairwise_keys(p.n, int(rng.integers(2 ** 62))) if use_prf else None
    if participants is None:
        participants = sorted(rng.choice(np.arange(1, p.n + 1), p.t, replace=False).tolist())
    flood = p.flood_bits if flooding else None
    failures = 0
    for _ in range(trials):
        mu = rng.integers(0, 2, ring.N)
        a, b = encrypt(sk, mu, p.scale_bits, ring.small(rng, 2 ** p.log_Be), rng)
        shares = [partial_decrypt(a, b, key, i, participants, flood, keys, rng) for i in participants]
        got = final_decrypt(b, shares, p.scale_bits)
        failures += int(not np.array_equal(got, mu))
    gap = flooding_gap_bits(p.log_N, p.lam, p.log_t)
    return Transcript(
        params=dict(p.__dict__), q=ring.q, participants=participants,
        share_bytes=ring.zero().size_bytes, ciphertext_bytes=2 * ring.zero().size_bytes,
        gap_bits=gap, delta_over_Be_bits=p.scale_bits - p.log_Be,
        gap_ok=p.scale_bits - p.log_Be >= gap, trials=trials, failures=failures,
        extra={"flood_std_bits": flood, "required_delta_bits": p.scale_bits,
               "noise_bound_bits": math.log2(p.noise_bound())})


def all_subsets(n: int, t: int):
    return [list(c) for c in combinations(range(1, n + 1), t)]
