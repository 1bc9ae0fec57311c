"""Homomorphic matching on the emulator: the naive and the folding algorithm.

Ciphertext batches are laid out as (eyes, rotations, slices, slots): slice l of
rotation r of eye e holds the scores of database entries l*N .. (l+1)*N - 1,
N = d being the ring degree of the score ciphertexts.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .emulator import (NEG_INF, EmulatedCiphertext, Emulator, EncryptedDb, Encoding, load_config,
                       log2_abs, log2_sum)
from .errors import ConfigError, GapCollapsed, ModulusBudget, ModulusExhausted, ZeroOverlap
from .iris_core import (IrisTemplate, ScoreModel, masked_matrix, match_db_reference, near_copy,
                        rotate, rotations, score_matrices, stack, synth_db)
from .poly_design import (ClassifierChain, EmulatorBackend, Polynomial, cleaning_eps,
                          cleaning_polynomial, compose_classifier, fold_fixture, max_abs_on,
                          ps_evaluate)

GROUPINGS = ("or", "sum")
TAU_POLICIES = ("p_prime", "midpoint")


@dataclass
class PipelineConfig:
    rho: int = 31
    batch: int = 4
    n_db: int = 4096
    d: int = 1024
    fold_k: int = 16
    beta: int = 4
    q0_bits: float = 60.0
    query_delta_bits: int = 16      # headroom per query bit before packing
    query_level: int = 6            # level of the query when entering CCMM
    db_scale_bits: float = 23.0
    delta_bits: int = 5             # scale kept for discretization
    e_comp: float = 13.0            # integer units at scale 2^delta
    e_bts: float = 0.25
    tau_policy: str = "p_prime"
    N: tuple = (-0.25, 0.25)
    P: tuple = (0.3, 0.48)
    fold_N: tuple = (-0.15, 0.35)
    fold_P: tuple = (0.4, 3.8)
    alg1_degrees: tuple = (15, 15, 7)
    core_degrees: tuple = (15, 15, 7)
    post_degrees: tuple = (31, 31)
    fold_poly: str | None = None    # JSON path; None selects the packaged fixture
    pre_or_bits: float = 30.0       # clean to 2^-pre_or_bits before OR-ing
    clean_bits: float = 88.0
    final_grouping: str = "or"
    max_matches: int = 4            # range of the integer indicator for grouping "sum"
    emulator: str | None = None     # emulator config path; None selects the default

    def __post_init__(self):
        for name in ("N", "P", "fold_N", "fold_P"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        for name in ("alg1_degrees", "core_degrees", "post_degrees"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.rho < 1 or self.batch < 1:
            raise ConfigError("rho and batch must be positive")
        if not 1 <= self.fold_k <= self.rho:
            raise ConfigError("fold_k must satisfy 1 <= k <= rho")
        if self.beta < 1:
            raise ConfigError("beta must be >= 1")
        if self.d < 2 or self.d & (self.d - 1):
            raise ConfigError("d must be a power of two")
        if self.n_db < 1 or self.n_db % self.d:
            raise ConfigError("n_db must be a positive multiple of d")
        if not self.N[1] < self.P[0] or not self.fold_N[1] < self.fold_P[0]:
            raise ConfigError("negative intervals must lie below positive intervals")
        if self.tau_policy not in TAU_POLICIES:
            raise ConfigError(f"tau_policy must be one of {TAU_POLICIES}")
        if self.final_grouping not in GROUPINGS:
            raise ConfigError(f"final_grouping must be one of {GROUPINGS}")

    @property
    def slices(self) -> int:
        return self.n_db // self.d

    @property
    def groups(self) -> int:
        return -(-self.rho // self.fold_k)

    def score_model(self) -> ScoreModel:
        return ScoreModel(negative_interval=self.N, positive_interval=self.P)

    def fold_polynomial(self) -> Polynomial:
        return fold_fixture() if self.fold_poly is None else Polynomial.load(self.fold_poly)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown pipeline keys: {sorted(extra)}")
        return cls(**d)


@lru_cache(maxsize=32)
def _chain(I0: tuple, I1: tuple, degrees: tuple) -> ClassifierChain:
    return compose_classifier(I0, I1, None, list(degrees))


def alg1_chain(cfg: PipelineConfig) -> ClassifierChain:
    return _chain(cfg.N, cfg.P, cfg.alg1_degrees)


def core_chain(cfg: PipelineConfig) -> ClassifierChain:
    return _chain(cfg.fold_N, cfg.fold_P, cfg.core_degrees)


@dataclass(frozen=True)
class DiscretizeParams:
    n_prime: int
    p_prime: int
    tau: int
    I0: tuple
    I1: tuple


def discretize_params(delta_bits: int, e_comp: float, e_bts: float,
                      tau_policy: str = "p_prime") -> DiscretizeParams:
    """Integer thresholds and the classification intervals (message units).

    N' = [-e_comp, e_comp] and P' = 2^delta + N'; n' = ceil(max N'),
    p' = floor(min P').  The returned intervals are
    [min N', tau - 1 + e_bts] and [tau - e_bts, max P'] divided by 2^delta.
    """
    top = 2 ** delta_bits
    n_p = math.ceil(e_comp)
    p_p = math.floor(top - e_comp)
    if n_p >= p_p:
        raise GapCollapsed(f"n'={n_p} >= p'={p_p}: noise {e_comp} too large for delta={delta_bits}")
    tau = p_p if tau_policy == "p_prime" else (n_p + p_p + 1) // 2
    lo = (-e_comp, tau - 1 + e_bts)
    hi = (tau - e_bts, top + e_comp)
    if not lo[1] < hi[0]:
        raise GapCollapsed("e_bts closes the gap around tau")
    return DiscretizeParams(n_p, p_p, tau, (lo[0] / top, lo[1] / top), (hi[0] / top, hi[1] / top))


def post_chain(cfg: PipelineConfig) -> ClassifierChain:
    dp = discretize_params(cfg.delta_bits, cfg.e_comp, cfg.e_bts, cfg.tau_policy)
    return _chain(dp.I0, dp.I1, cfg.post_degrees)


def indicator_chain(cfg: PipelineConfig) -> ClassifierChain:
    return _chain((-0.25, 0.25), (0.75, cfg.max_matches + 0.25), cfg.core_degrees)


# --- level management ----------------------------------------------------

def work_floor(ev: Emulator, scale_bits: float = 40.0) -> int:
    """Lowest level a scale-2^scale_bits ciphertext may reach through rescaling.

    Rescaling at level l divides by the level-l prime, so products keep their
    scale only while every prime above the floor has scale_bits bits.
    """
    floor = 0
    for lv in range(1, ev.chain.top_level + 1):
        if abs(ev.chain.bits(lv) - scale_bits) > 1e-9:
            floor = lv
    return floor


def ensure_levels(ev: Emulator, ct: EmulatedCiphertext, need: int) -> EmulatedCiphertext:
    """Bootstrap (CtS-first) when fewer than `need` working levels remain."""
    floor = work_floor(ev, ev.config.profile("CtSFirst").output_scale_bits)
    if ct.level - need >= floor:
        return ct
    out = ev.bts(ev.level_down(ct, 0), "CtSFirst")
    if out.level - need < floor:
        raise ModulusExhausted(f"{need} levels exceed what one bootstrap provides")
    return out


def _concat(ev: Emulator, parts: list) -> EmulatedCiphertext:
    parts = ev.match_levels(*parts)
    return replace(parts[0], message=np.concatenate([p.message for p in parts]),
                   noise_bound_bits=max(p.noise_bound_bits for p in parts))


def _axis_first(ct: EmulatedCiphertext, axis: int) -> EmulatedCiphertext:
    """Relabel the batch so `axis` comes first (pure layout change)."""
    return replace(ct, message=np.moveaxis(ct.message, axis, 0))


def _evaluate(ev: Emulator, p: Polynomial, ct: EmulatedCiphertext) -> EmulatedCiphertext:
    """p(ct) with the input error carried through a local Lipschitz bound.

    |p(m + e) - p(m)| <= max |p'| on [m - e, m + e] * e; the evaluation itself
    starts from a noiseless twin so per-op bounds only cover its own rounding.
    """
    e = ct.error_bound
    out = ps_evaluate(p, replace(ct, noise_bound_bits=NEG_INF), EmulatorBackend(ev))
    if e > 0:
        m = np.real(ct.message)
        lip = float(np.max(max_abs_on(p.derivative(), m - e, m + e)))
        prop = log2_abs(lip * e) + out.scale_bits
        out = replace(out, noise_bound_bits=log2_sum(out.noise_bound_bits, prop))
    return out


def contained(ct: EmulatedCiphertext, I0, I1) -> np.ndarray:
    """Entries whose whole error ball lies inside I0 or I1."""
    m, e = np.real(ct.message), ct.error_bound
    return ((m - e >= I0[0]) & (m + e <= I0[1])) | ((m - e >= I1[0]) & (m + e <= I1[1]))


def apply_chain(ev: Emulator, chain: ClassifierChain, ct: EmulatedCiphertext) -> EmulatedCiphertext:
    """Evaluate a classification chain.

    Inputs whose error ball stays inside I0 u I1 land within eps of the bit for
    both the true and the twin value, so the input error is absorbed and the
    output error is 2 eps plus the evaluation noise.  Entries outside are
    counted under the op name "out_of_range".
    """
    bad = int(np.count_nonzero(~contained(ct, chain.I0, chain.I1)))
    if bad:
        ev.ops["out_of_range"] += bad
    x = replace(ct, noise_bound_bits=NEG_INF)
    for p in chain.stages:
        x = ensure_levels(ev, x, math.ceil(math.log2(p.degree + 1)))
        x = ps_evaluate(p, x, EmulatorBackend(ev))
    nb = log2_sum(x.noise_bound_bits, log2_abs(2 * chain.eps) + x.scale_bits)
    return replace(x, noise_bound_bits=nb)


def clean(ev: Emulator, ct: EmulatedCiphertext, eps: float, target: float):
    """Apply h(x) = 3x^2 - 2x^3 until the deviation bound drops below target."""
    h = cleaning_polynomial()
    while eps > target:
        ct = ensure_levels(ev, ct, 2)
        ct = _evaluate(ev, h, ct)
        nxt = cleaning_eps(eps)
        if nxt >= eps:
            raise GapCollapsed(f"deviation {eps:.3g} is outside the cleaning basin")
        eps = nxt
    return ct, eps


# --- query side ------------------------------------------------------------

def query_bits(queries, rho: int) -> tuple[np.ndarray, np.ndarray]:
    """(codes, masks) of every rotation, each of shape (eyes, rho, d)."""
    codes, masks = [], []
    for q in queries:
        c, m = stack(rotations(q, rho))
        codes.append(c)
        masks.append(m)
    return np.stack(codes), np.stack(masks)


def encrypt_query_bits(ev: Emulator, codes: np.ndarray, cfg: PipelineConfig) -> EmulatedCiphertext:
    """Fresh bottom-level coefficient encryptions of the rotated code bits.

    The rotation axis is zero-padded to a multiple of beta.
    """
    B, rho, d = codes.shape
    pad = -rho % cfg.beta
    bits = np.concatenate([codes, np.zeros((B, pad, d), codes.dtype)], axis=1).astype(np.float64)
    scale = cfg.q0_bits - cfg.query_delta_bits - cfg.beta
    return ev.ecd(bits, Encoding.COEFF, scale, level=0, log_ring_degree=int(math.log2(d)), ci=True)


def pack_query(ev: Emulator, bits: EmulatedCiphertext, beta: int,
               delta_bits: int | None = None) -> EmulatedCiphertext:
    """ct'_j = sum_i 2^i ct_{j*beta + i} over the rotation axis (axis 1).

    Multiplying by 2^i is done with additions, which are free at the bottom
    level.  The packed integers need beta more bits above the scale.
    """
    if beta < 1:
        raise ConfigError("beta must be >= 1")
    B, R = bits.batch_shape[:2]
    if R % beta:
        raise ConfigError("rotation count must be padded to a multiple of beta")
    if delta_bits is not None:
        room = ev.chain.modulus_bits(bits.level) - bits.scale_bits
        if room < delta_bits + beta - 1e-9:
            raise ModulusBudget(f"packing {beta} bits needs {delta_bits + beta} bits of headroom, "
                                f"have {room:g}")
    view = replace(bits, message=bits.message.reshape(B, R // beta, beta, -1))
    acc = view[:, :, beta - 1]
    for i in range(beta - 2, -1, -1):
        acc = ev.add(ev.add(acc, acc), view[:, :, i])
    return acc


def preprocess_query(ev: Emulator, packed: EmulatedCiphertext, beta: int, rho: int,
                     masks: np.ndarray) -> EmulatedCiphertext:
    """Integer bootstrap, bit extraction and m * (1 - 2c); masks stay plaintext."""
    with ev.phase("query"):
        ct = ev.bts(packed, "SIHalf")
    ct = ev.extract_bits(ct, beta)                  # (eyes, J, beta, d)
    B, J = ct.batch_shape[:2]
    ct = replace(ct, message=ct.message.reshape(B, J * beta, -1)[:, :rho])
    ct = ev.add_const(ev.mult_const(ct, -2.0), 1.0)
    return ev.rescale(ev.pmult(ct, masks.astype(np.float64)))


def encrypt_db(ev: Emulator, db, cfg: PipelineConfig, query_scale_bits: float = 40.0) -> EncryptedDb:
    """Database at the modulus Q^2 / Delta demanded by the query level."""
    M = masked_matrix(db)
    mod = 2 * ev.chain.modulus_bits(cfg.query_level) - query_scale_bits
    return EncryptedDb(M, int(math.log2(cfg.d)), mod, cfg.db_scale_bits)


def normalize(ev: Emulator, scores: EmulatedCiphertext, query_masks: np.ndarray,
              db_masks: np.ndarray) -> EmulatedCiphertext:
    """Divide every score by its mask overlap (one plaintext product and rescale).

    query_masks: (eyes, rho, d); db_masks: (n_db, d); scores: (eyes, rho, L, N).
    """
    ov = np.einsum("erd,nd->ern", query_masks.astype(np.float64), db_masks.astype(np.float64))
    ov = ov.reshape(scores.message.shape)
    if np.any(ov == 0):
        raise ZeroOverlap("a query rotation has empty mask overlap with a database entry")
    pt = 1.0 / ov
    return ev.rescale(ev.pmult(scores, pt, ev.chain.bits(scores.level)))


def encrypted_scores(ev: Emulator, cfg: PipelineConfig, queries, db):
    """Query preprocessing plus CCMM; returns (scores ct, query masks, db masks)."""
    codes, qmasks = query_bits(queries, cfg.rho)
    bits = encrypt_query_bits(ev, codes, cfg)
    packed = pack_query(ev, bits, cfg.beta, cfg.query_delta_bits)
    qct = preprocess_query(ev, packed, cfg.beta, cfg.rho, qmasks)
    qct = ev.level_down(qct, cfg.query_level)
    B = len(queries)
    flat = replace(qct, message=qct.message.reshape(B * cfg.rho, cfg.d))
    enc = encrypt_db(ev, db, cfg, qct.scale_bits)
    scores = ev.ccmm_twin(enc, flat)
    scores = replace(scores, message=scores.message.reshape(B, cfg.rho, cfg.slices, cfg.d))
    _, dmasks = stack(db)
    return scores, qmasks, dmasks


# --- classification back end -------------------------------------------------

def fold_group(ev: Emulator, group: EmulatedCiphertext, f: Polynomial) -> EmulatedCiphertext:
    """sum_s Rot_s(f(ct_s)) over the leading batch axis s of `group`."""
    fx = _evaluate(ev, f, group)
    acc = fx[0]
    for s in range(1, fx.batch_shape[0]):
        acc = ev.add(acc, ev.rot(fx[s], s))
    return acc


def discretize(ev: Emulator, ct: EmulatedCiphertext, cfg: PipelineConfig):
    """Rescale to 2^delta, half-bootstrap and classify around tau.

    Returns (ct, margin) where margin is e_comp minus the tracked error in
    integer units just before the half bootstrap.
    """
    dp = discretize_params(cfg.delta_bits, cfg.e_comp, cfg.e_bts, cfg.tau_policy)
    ct = ensure_levels(ev, ct, ev.config.stc_levels)
    ct = ev.slot_to_coeff(ct)
    ct = ev.level_down(ct, 1)
    ct = ev.rescale(ct, ct.scale_bits - cfg.delta_bits)
    top = 2 ** cfg.delta_bits
    dev = float(np.max(np.minimum(np.abs(ct.message), np.abs(ct.message - 1)))) * top
    margin = cfg.e_comp - (2.0 ** ct.noise_bound_bits + dev)
    ct = ev.bts(ct, "Half")
    return apply_chain(ev, post_chain(cfg), ct), margin


def or2(ev: Emulator, a: EmulatedCiphertext, b: EmulatedCiphertext) -> EmulatedCiphertext:
    """x OR y = x + y - x*y."""
    a, b = ev.match_levels(ensure_levels(ev, a, 1), ensure_levels(ev, b, 1))
    prod = ev.rescale(ev.mult(a, b))
    s, prod = ev.match_levels(ev.add(a, b), prod)
    return ev.sub(s, prod)


def or_tree(ev: Emulator, ct: EmulatedCiphertext) -> EmulatedCiphertext:
    """OR over the leading batch axis in a balanced tree of depth ceil(log2 n)."""
    n = ct.batch_shape[0]
    while n > 1:
        h = n // 2
        merged = or2(ev, ct[:h], ct[h:2 * h])
        ct = _concat(ev, [merged, ct[2 * h:]]) if n % 2 else merged
        n = ct.batch_shape[0]
    return ct[0]


def rotate_or(ev: Emulator, ct: EmulatedCiphertext) -> EmulatedCiphertext:
    """ct <- ct OR Rot_{2^i}(ct) for i < log2(slots): every slot ends with the total OR."""
    for i in range(int(math.log2(ct.slots))):
        ct = ensure_levels(ev, ct, 1)
        ct = or2(ev, ct, ev.rot(ct, 1 << i))
    return ct


def rotate_sum(ev: Emulator, ct: EmulatedCiphertext) -> EmulatedCiphertext:
    for i in range(int(math.log2(ct.slots))):
        ct = ensure_levels(ev, ct, 1)
        ct = ev.add(ct, ev.rot(ct, 1 << i))
    return ct


def postprocess_clean(ev: Emulator, ct: EmulatedCiphertext, cfg: PipelineConfig):
    """Post-processing chain, then h-cleaning to 2^-clean_bits; returns (ct, eps)."""
    chain = post_chain(cfg)
    ct = apply_chain(ev, chain, ct)
    return clean(ev, ct, chain.eps, 2.0 ** -cfg.clean_bits)


def _or_bound(eps: float, depth: int) -> float:
    for _ in range(depth):
        eps = 2 * eps + eps * eps
    return eps


def _final_grouping(ev: Emulator, ct: EmulatedCiphertext, eps: float, cfg: PipelineConfig):
    """Combine a (fan_in, eyes, slots) batch of near-binary values per eye."""
    ct, eps = clean(ev, ct, eps, 2.0 ** -cfg.pre_or_bits)
    if cfg.final_grouping == "sum":
        acc = ct[0]
        for i in range(1, ct.batch_shape[0]):
            acc = ev.add(acc, ct[i])
        acc = rotate_sum(ev, acc)
        acc = apply_chain(ev, indicator_chain(cfg), acc)
        return clean(ev, acc, indicator_chain(cfg).eps, 2.0 ** -cfg.clean_bits)
    depth = math.ceil(math.log2(ct.batch_shape[0])) + int(math.log2(ct.slots))
    ct = rotate_or(ev, or_tree(ev, ct))
    bound = _or_bound(eps, depth)
    if bound >= 0.25:
        raise GapCollapsed(f"OR amplification leaves deviation {bound:.3g}")
    return postprocess_clean(ev, ct, cfg)


# --- algorithms ------------------------------------------------------------------

@dataclass
class RunResult:
    output: EmulatedCiphertext
    bits: np.ndarray
    report: dict = field(default_factory=dict)


def _finish(ev: Emulator, alg: int, cfg: PipelineConfig, out: EmulatedCiphertext, eps: float,
            margin: float, queries, db, extra: dict) -> RunResult:
    msg = out.message
    bits = np.rint(msg[:, 0]).astype(np.int64)
    if not np.all(np.rint(msg) == bits[:, None]):
        raise GapCollapsed("output slots disagree after the final OR")
    dev = float(np.max(np.abs(msg - bits[:, None])))
    report = {"alg": alg, "match_bits": bits.tolist(),
              "bts": dict(ev.bts_by_phase), "bts_total": ev.bts_count(),
              "ops": dict(ev.ops), "final_level": out.level,
              "final_deviation": dev, "declared_eps": eps,
              "discretize_margin": margin, **extra}
    if ev.trace is not None and ev.trace:
        report["min_level"] = min(r.level_after for r in ev.trace)
    oracle = [match_db_reference(rotations(q, cfg.rho), db, cfg.N, cfg.P) for q in queries]
    report["oracle_bits"] = oracle
    report["agree"] = bool(np.array_equal(bits, oracle))
    return RunResult(out, bits, report)


def _check_inputs(cfg: PipelineConfig, queries, db):
    if len(db) != cfg.n_db:
        raise ConfigError(f"database has {len(db)} entries, config says {cfg.n_db}")
    for t in list(queries) + [db[0]]:
        if t.d != cfg.d:
            raise ConfigError(f"template length {t.d} differs from d={cfg.d}")


def run_alg1(cfg: PipelineConfig, queries, db, ev: Emulator | None = None) -> RunResult:
    """Naive loop: classify every (eye, rotation, slice) score ciphertext."""
    _check_inputs(cfg, queries, db)
    ev = ev if ev is not None else Emulator(load_config(cfg.emulator))
    scores, qm, dm = encrypted_scores(ev, cfg, queries, db)
    x = normalize(ev, scores, qm, dm)
    with ev.phase("pre"):
        x = ev.bts(ev.level_down(x, 0), "CtSFirst")
    chain = alg1_chain(cfg)
    x = apply_chain(ev, chain, x)
    with ev.phase("discretize"):
        x, margin = discretize(ev, x, cfg)
    B = x.batch_shape[0]
    # (eyes, rho, L, N) -> (rho * L, eyes, N)
    x = replace(x, message=np.moveaxis(x.message, 0, 2).reshape(-1, B, cfg.d))
    with ev.phase("post"):
        out, eps = _final_grouping(ev, x, post_chain(cfg).eps, cfg)
    return _finish(ev, 1, cfg, out, eps, margin, queries, db,
                   {"classifier_eps": chain.eps_schedule,
                    "post_eps": post_chain(cfg).eps_schedule})


def run_alg2(cfg: PipelineConfig, queries, db, ev: Emulator | None = None) -> RunResult:
    """Folding loop: groups of k rotations share one bootstrap and classification."""
    _check_inputs(cfg, queries, db)
    ev = ev if ev is not None else Emulator(load_config(cfg.emulator))
    scores, qm, dm = encrypted_scores(ev, cfg, queries, db)
    x = _axis_first(normalize(ev, scores, qm, dm), 1)      # (rho, eyes, L, N)
    f = cfg.fold_polynomial()
    k = cfg.fold_k
    folded = [fold_group(ev, x[g * k:(g + 1) * k], f) for g in range(cfg.groups)]
    y = _concat(ev, [replace(c, message=c.message[None]) for c in folded])  # (G, eyes, L, N)
    with ev.phase("pre"):
        y = ev.bts(ev.level_down(y, 0), "CtSFirst")
    chain = core_chain(cfg)
    y = apply_chain(ev, chain, y)
    # refold: at most one group per slot carries a match
    acc = y[0]
    for g in range(1, y.batch_shape[0]):
        acc = ev.add(acc, y[g])
    with ev.phase("discretize"):
        z, margin = discretize(ev, acc, cfg)
    z = _axis_first(z, 1)                                    # (L, eyes, N)
    with ev.phase("post"):
        out, eps = _final_grouping(ev, z, post_chain(cfg).eps, cfg)
    return _finish(ev, 2, cfg, out, eps, margin, queries, db,
                   {"classifier_eps": chain.eps_schedule,
                    "post_eps": post_chain(cfg).eps_schedule})


# --- oracle instances ----------------------------------------------------------

@dataclass
class Instance:
    queries: list
    db: list
    planted: list          # per eye: (db index, rotation) or None
    expected: list         # per-eye oracle bits


def fold_shadow(cfg: PipelineConfig, scores: np.ndarray, f: Polynomial):
    """Plaintext twin of the folding step for one eye.

    scores: (n_db, rho).  Returns (folded sums, positive flags, positives per slot),
    each of shape (groups, L, N).
    """
    S = scores.T.reshape(cfg.rho, cfg.slices, cfg.d)
    F = f(S)
    pos = (S >= cfg.P[0]).astype(np.int64)
    k = cfg.fold_k
    sums, flags = [], []
    for g in range(cfg.groups):
        acc = np.zeros((cfg.slices, cfg.d))
        cnt = np.zeros((cfg.slices, cfg.d), np.int64)
        for s, r in enumerate(range(g * k, min(cfg.rho, (g + 1) * k))):
            acc += np.roll(F[r], -s, axis=-1)
            cnt += np.roll(pos[r], -s, axis=-1)
        sums.append(acc)
        flags.append(cnt)
    return np.stack(sums), np.stack(flags) > 0, np.stack(flags)


def instance_ok(cfg: PipelineConfig, queries, db, f: Polynomial | None = None) -> bool:
    """Scores inside N u P, folding assumption and folded sums inside the core intervals."""
    f = f if f is not None else cfg.fold_polynomial()
    n_lo, n_hi = cfg.N
    p_lo, p_hi = cfg.P
    for q in queries:
        inners, overlaps = score_matrices(rotations(q, cfg.rho), db)
        if np.any(overlaps == 0):
            return False
        S = inners / overlaps
        in_n = (S >= n_lo) & (S <= n_hi)
        in_p = (S >= p_lo) & (S <= p_hi)
        if not np.all(in_n | in_p) or in_p.sum() > 1:
            return False
        sums, has_pos, cnt = fold_shadow(cfg, S, f)
        if np.any(cnt > 1):
            return False
        neg_ok = (sums >= cfg.fold_N[0]) & (sums <= cfg.fold_N[1])
        pos_ok = (sums >= cfg.fold_P[0]) & (sums <= cfg.fold_P[1])
        if not np.all(np.where(has_pos, pos_ok, neg_ok)):
            return False
    return True


def make_instance(cfg: PipelineConfig, seed: int, plant_rate: float = 0.5,
                  flip_fraction: float = 0.3, mask_density: float = 0.9,
                  max_tries: int = 50) -> Instance:
    """Random database and query eyes, each eye matching at most one planted entry.

    A planted eye is a near copy of a database entry, pre-rotated so that
    rotation r of the query aligns with it; its score is 1 - 2 * flip_fraction.
    Instances violating the oracle preconditions are redrawn.
    """
    rng = np.random.default_rng(seed)
    f = cfg.fold_polynomial()
    for _ in range(max_tries):
        db = synth_db(cfg.n_db, cfg.d, mask_density, int(rng.integers(2**62)))
        queries, planted = [], []
        for _ in range(cfg.batch):
            if rng.random() < plant_rate:
                j, r = int(rng.integers(cfg.n_db)), int(rng.integers(cfg.rho))
                queries.append(rotate(near_copy(db[j], flip_fraction, rng), -r))
                planted.append((j, r))
            else:
                queries.append(synth_db(1, cfg.d, mask_density, int(rng.integers(2**62)))[0])
                planted.append(None)
        if instance_ok(cfg, queries, db, f):
            expected = [match_db_reference(rotations(q, cfg.rho), db, cfg.N, cfg.P)
                        for q in queries]
            return Instance(queries, db, planted, expected)
    raise RuntimeError(f"no valid instance in {max_tries} draws")


def load_pipeline_config(path) -> PipelineConfig:
    with open(path) as fh:
        return PipelineConfig.from_dict(json.load(fh))
