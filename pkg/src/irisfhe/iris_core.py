"""Plain iris templates: masked bitvectors, scores, rotations and the match_db oracle.

Everything here works on unencrypted data and serves as ground truth for the
homomorphic pipeline.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ZeroOverlap

TEMPLATE_MAGIC = b"IRIS"
TEMPLATE_VERSION = 1
_HEADER = struct.Struct("<4sHII")


def _bits(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.uint8).copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IrisTemplate:
    """Binary iris code together with its validity mask."""

    code: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        code, mask = _bits(self.code), _bits(self.mask)
        if code.ndim != 1 or code.shape != mask.shape or code.size < 1:
            raise ValueError("code and mask must be 1-D bit vectors of equal length d >= 1")
        if code.max(initial=0) > 1 or mask.max(initial=0) > 1:
            raise ValueError("template entries must be 0 or 1")
        object.__setattr__(self, "code", code)
        object.__setattr__(self, "mask", mask)

    @property
    def d(self) -> int:
        return self.code.size

    @classmethod
    def from_strings(cls, code: str, mask: str) -> "IrisTemplate":
        return cls([int(ch) for ch in code], [int(ch) for ch in mask])

    def __eq__(self, other):
        if not isinstance(other, IrisTemplate):
            return NotImplemented
        return np.array_equal(self.code, other.code) and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.code.tobytes(), self.mask.tobytes()))


@dataclass(frozen=True, eq=False)
class MaskedBitvector:
    """Ternary vector m - 2(c AND m); zero exactly where the mask is zero."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int8).copy()
        if not np.isin(v, (-1, 0, 1)).all():
            raise ValueError("masked bitvector entries must be in {-1, 0, 1}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        if not isinstance(other, MaskedBitvector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


@dataclass(frozen=True)
class ScoreModel:
    """Normal model of non-matching scores plus the decision intervals N and P."""

    mean: float = 0.008
    std: float = 0.034
    negative_interval: tuple[float, float] = (-0.25, 0.25)
    positive_interval: tuple[float, float] = (0.3, 0.48)

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigError("ScoreModel.std must be positive")
        n_lo, n_hi = self.negative_interval
        p_lo, p_hi = self.positive_interval
        if n_lo > n_hi or p_lo > p_hi:
            raise ConfigError("intervals must be ordered (lo <= hi)")
        if not n_hi < p_lo:
            raise ConfigError("max(N) must be strictly below min(P)")

    def sample_negatives(self, size, rng: np.random.Generator) -> np.ndarray:
        """Draw from the normal law truncated to N (rejection sampling)."""
        lo, hi = self.negative_interval
        out = np.empty(int(np.prod(size)))
        filled = 0
        while filled < out.size:
            x = rng.normal(self.mean, self.std, out.size - filled)
            x = x[(x >= lo) & (x <= hi)]
            out[filled:filled + x.size] = x
            filled += x.size
        return out.reshape(size)


def to_masked(t: IrisTemplate) -> MaskedBitvector:
    c = t.code.astype(np.int8)
    m = t.mask.astype(np.int8)
    return MaskedBitvector(m - 2 * (c & m))


def _check_pair(a: IrisTemplate, b: IrisTemplate) -> int:
    if a.d != b.d:
        raise ValueError(f"template lengths differ: {a.d} != {b.d}")
    overlap = int(np.count_nonzero(a.mask & b.mask))
    if overlap == 0:
        raise ZeroOverlap("masks have no common valid bit")
    return overlap


def inner(a: IrisTemplate, b: IrisTemplate) -> int:
    """Unnormalized score <a', b'> (exact integer)."""
    return int(np.dot(to_masked(a).values.astype(np.int64), to_masked(b).values.astype(np.int64)))


def score(a: IrisTemplate, b: IrisTemplate) -> float:
    overlap = _check_pair(a, b)
    return inner(a, b) / overlap


def distance(a: IrisTemplate, b: IrisTemplate) -> float:
    """Fractional Hamming distance over the common mask."""
    overlap = _check_pair(a, b)
    hd = int(np.count_nonzero((a.code ^ b.code) & a.mask & b.mask))
    return hd / overlap


def rotate(t: IrisTemplate, r: int) -> IrisTemplate:
    """Cyclic shift of code and mask by r positions (r taken modulo d)."""
    return IrisTemplate(np.roll(t.code, r), np.roll(t.mask, r))


def rotations(t: IrisTemplate, rho: int) -> list[IrisTemplate]:
    """The rho query rotations r = 0..rho-1 used by the pipeline."""
    return [rotate(t, r) for r in range(rho)]


def pad_to_power_of_two(t: IrisTemplate) -> IrisTemplate:
    d = t.d
    n = 1 << (d - 1).bit_length()
    if n == d:
        return t
    pad = np.zeros(n - d, dtype=np.uint8)
    return IrisTemplate(np.concatenate([t.code, pad]), np.concatenate([t.mask, pad]))


def stack(templates: Sequence[IrisTemplate]) -> tuple[np.ndarray, np.ndarray]:
    """Stack templates into (codes, masks) uint8 arrays of shape (n, d)."""
    codes = np.stack([t.code for t in templates])
    masks = np.stack([t.mask for t in templates])
    return codes, masks


def masked_matrix(templates: Sequence[IrisTemplate]) -> np.ndarray:
    codes, masks = stack(templates)
    c = codes.astype(np.int8)
    m = masks.astype(np.int8)
    return m - 2 * (c & m)


def score_matrices(query: Sequence[IrisTemplate], db: Sequence[IrisTemplate]):
    """Return (inner products, overlaps) as int64 arrays of shape (len(db), len(query))."""
    qv = masked_matrix(query).astype(np.float64)
    dv = masked_matrix(db).astype(np.float64)
    _, qm = stack(query)
    _, dm = stack(db)
    # float64 GEMM is exact here: |entries| <= d < 2^53
    inners = np.rint(dv @ qv.T).astype(np.int64)
    overlaps = np.rint(dm.astype(np.float64) @ qm.T.astype(np.float64)).astype(np.int64)
    return inners, overlaps


def match_db_reference(query: Sequence[IrisTemplate], db: Sequence[IrisTemplate],
                       N_int: tuple[float, float], P_int: tuple[float, float]) -> int:
    """OR over all rotation x database match bits.

    Scores inside N give 0 and scores inside P give 1.  A score falling in the
    gap between the intervals is resolved by comparing against the gap midpoint,
    which keeps the result binary.
    """
    inners, overlaps = score_matrices(query, db)
    if (overlaps == 0).any():
        raise ZeroOverlap("at least one query/database pair has empty mask overlap")
    scores = inners / overlaps
    cut = 0.5 * (N_int[1] + P_int[0])
    return int((scores > cut).any())


def synth_db(n_db: int, d: int, mask_density: float, seed: int) -> list[IrisTemplate]:
    """Uniform codes with Bernoulli(mask_density) masks."""
    if not 0 < mask_density <= 1:
        raise ValueError("mask_density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, 2, size=(n_db, d), dtype=np.uint8)
    if mask_density == 1:
        masks = np.ones((n_db, d), dtype=np.uint8)
    else:
        masks = (rng.random((n_db, d)) < mask_density).astype(np.uint8)
    return [IrisTemplate(c, m) for c, m in zip(codes, masks)]


def near_copy(t: IrisTemplate, flip_fraction: float, rng: np.random.Generator) -> IrisTemplate:
    """Copy of t with exactly round(flip_fraction * |mask|) valid code bits flipped.

    The copy keeps the mask, so score(t, copy) = 1 - 2 * flips / |mask| exactly.
    """
    valid = np.flatnonzero(t.mask)
    flips = int(round(flip_fraction * valid.size))
    idx = rng.choice(valid, size=flips, replace=False)
    code = t.code.copy()
    code[idx] ^= 1
    return IrisTemplate(code, t.mask)


# --- serialization -------------------------------------------------------

def write_templates(path, templates: Sequence[IrisTemplate]) -> None:
    """Binary format: header {magic, version, n, d}, code plane, mask plane.

    Planes are packed row-major with little-endian bit order.
    """
    codes, masks = stack(templates) if templates else (np.zeros((0, 0), np.uint8),) * 2
    n, d = codes.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TEMPLATE_MAGIC, TEMPLATE_VERSION, n, d))
        fh.write(np.packbits(codes.ravel(), bitorder="little").tobytes())
        fh.write(np.packbits(masks.ravel(), bitorder="little").tobytes())


def read_templates(path) -> list[IrisTemplate]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated template file")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != TEMPLATE_MAGIC or version != TEMPLATE_VERSION:
        raise ValueError("not a template file (bad magic or version)")
    nbytes = (n * d + 7) // 8
    body = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size)
    if body.size != 2 * nbytes:
        raise ValueError("template file size does not match header")
    codes = np.unpackbits(body[:nbytes], bitorder="little")[: n * d].reshape(n, d)
    masks = np.unpackbits(body[nbytes:], bitorder="little")[: n * d].reshape(n, d)
    return [IrisTemplate(c, m) for c, m in zip(codes, masks)]


def templates_to_json(templates: Sequence[IrisTemplate]) -> str:
    return json.dumps({
        "version": TEMPLATE_VERSION,
        "d": templates[0].d if templates else 0,
        "templates": [{"code": "".join(map(str, t.code)), "mask": "".join(map(str, t.mask))}
                      for t in templates],
    })


def templates_from_json(text: str) -> list[IrisTemplate]:
    doc = json.loads(text)
    return [IrisTemplate.from_strings(e["code"], e["mask"]) for e in doc["templates"]]
