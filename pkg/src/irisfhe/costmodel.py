"""Closed-form sizes: encrypted database, queries, threshold traffic, GPU layout.

All sizes use binary units (KB = 2^10 bytes, GB = 2^30 bytes).  Integer inputs
give exact integer results.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .modmat import build_paper_basis

KB = 2 ** 10
MB = 2 ** 20
GB = 2 ** 30


def _pos_int(name, v, allow_zero=False):
    if not isinstance(v, int) or isinstance(v, bool) or v < (0 if allow_zero else 1):
        raise ConfigError(f"{name} must be a {'non-negative' if allow_zero else 'positive'} integer")


def db_coefficients(ell: int, log_N_db: int = 14, log_N_qry: int = 13) -> int:
    """Ring coefficients of the database in shared-a RGSW form.

    (N_db + N_qry) a-part polynomials plus ell times as many b-part ones, each of
    degree N_db: 3 (ell + 1) 2^27 for the default dimensions.
    """
    _pos_int("ell", ell, allow_zero=True)
    return (2 ** log_N_db + 2 ** log_N_qry) * (ell + 1) * 2 ** log_N_db


def db_size_bits(ell: int, log_Q, log_N_db: int = 14, log_N_qry: int = 13):
    return db_coefficients(ell, log_N_db, log_N_qry) * log_Q


def db_size_bytes_int8(ell: int, planes: int = 48, log_N_db: int = 14, log_N_qry: int = 13) -> int:
    """One byte per digit plane per coefficient."""
    _pos_int("planes", planes)
    return planes * db_coefficients(ell, log_N_db, log_N_qry)


def ciphertext_bytes(log_N: int, q_bits: int, parts: int = 2) -> int:
    """An RLWE ciphertext: `parts` polynomials of 2^log_N coefficients of q_bits bits."""
    bits = parts * 2 ** log_N * q_bits
    return bits // 8 if bits % 8 == 0 else bits / 8


def query_size_bytes(log_N: int = 16, q_bits: int = 16, cts_per_query: int = 2) -> int:
    return cts_per_query * ciphertext_bytes(log_N, q_bits)


def query_ciphertexts(d: int, rho: int, beta: int, log_N: int) -> int:
    """Ciphertexts per query eye: ceil(rho / beta) packed integers per coordinate."""
    _pos_int("beta", beta)
    return math.ceil(math.ceil(rho / beta) * d / 2 ** log_N)


def expansion_factor(delta: float, beta: float) -> float:
    """Relative ciphertext expansion of beta-bit packing: (delta + beta) / (delta * beta)."""
    if delta <= 0 or beta <= 0:
        raise ConfigError("delta and beta must be positive")
    return (delta + beta) / (delta * beta)


@dataclass
class CommParams:
    query_log_N: int = 16
    query_q_bits: int = 16
    cts_per_query: int = 2
    query_eyes: int = 31
    dec_log_N: int = 13
    dec_q_bits: int = 128
    decryptors: int = 8
    subring: int = 32
    truncated_bits: int = 16


def comm_report(p: CommParams | None = None) -> dict:
    """Traffic of the querier, the decryptors and the receiver (bytes)."""
    p = p if p is not None else CommParams()
    dec_ct = ciphertext_bytes(p.dec_log_N, p.dec_q_bits)
    share = ciphertext_bytes(p.dec_log_N, p.dec_q_bits, parts=1)
    # b-part and t shares, each restricted to a subring and truncated
    receiver = (p.decryptors + 1) * p.subring * p.truncated_bits // 8
    return {
        "query_bytes": query_size_bytes(p.query_log_N, p.query_q_bits, p.cts_per_query),
        "query_ciphertexts_total": p.cts_per_query * p.query_eyes,
        "decryptor_ciphertext_bytes": dec_ct,
        "decryptor_input_bytes": share,        # only the a-part goes to the decryptors
        "share_bytes": share,
        "receiver_bytes": receiver,
        "receiver_full_bytes": share * (p.decryptors + 1),
    }


@dataclass
class GpuPlan:
    n_db: int
    N_db: int
    slices: int
    planes: int
    a_gpus: int
    b_gpus: int
    entries_per_b_gpu: int
    ell_per_b_gpu: int
    a_bytes: int
    b_bytes_per_gpu: int
    total_bytes: int

    def per_gpu_gb(self) -> list[float]:
        return [self.a_bytes / GB] + [self.b_bytes_per_gpu / GB] * self.b_gpus


def gpu_distribution_plan(n_db: int = 7 * 2 ** 14, N_db: int = 2 ** 14, slices: int = 8,
                          planes: int = 48, log_N_qry: int = 13) -> GpuPlan:
    """One GPU holds the a-part, the other slices - 1 hold equal b-part slices."""
    for name, v in (("n_db", n_db), ("N_db", N_db), ("slices", slices)):
        _pos_int(name, v)
    if slices < 2:
        raise ConfigError("need one a-part GPU and at least one b-part GPU")
    b = slices - 1
    if n_db % (b * N_db):
        raise ConfigError(f"n_db={n_db} must split into {b} slices of whole N_db={N_db} blocks")
    per = n_db // b
    ell = per // N_db
    log_N_db = int(math.log2(N_db))
    # a-part: the ell = 0 share; b-part: ell blocks of the same shape
    a_bytes = db_size_bytes_int8(0, planes, log_N_db, log_N_qry)
    b_bytes = ell * a_bytes
    return GpuPlan(n_db, N_db, slices, planes, 1, b, per, ell, a_bytes, b_bytes, a_bytes + b * b_bytes)


def clusters_needed(n_db: int, per_cluster: int = 7 * 2 ** 14) -> int:
    _pos_int("n_db", n_db)
    return -(-n_db // per_cluster)


@dataclass
class CostConfig:
    ell: int = 1
    planes: int | None = None          # None: digit planes of the default basis
    log_Q: float | None = None         # None: log2 of the default basis modulus
    log_N_db: int = 14
    log_N_qry: int = 13
    n_db: int = 7 * 2 ** 14
    slices: int = 8
    target_db: int = 2 ** 22
    delta: int = 16
    beta: int = 4
    d: int = 2 ** 14
    rho: int = 31
    comm: CommParams = field(default_factory=CommParams)

    @classmethod
    def from_dict(cls, d: dict) -> "CostConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown cost keys: {sorted(extra)}")
        d = dict(d)
        if "comm" in d:
            ck = {f.name for f in fields(CommParams)}
            if set(d["comm"]) - ck:
                raise ConfigError(f"unknown comm keys: {sorted(set(d['comm']) - ck)}")
            d["comm"] = CommParams(**d["comm"])
        return cls(**d)


def cost_report(cfg: CostConfig | None = None) -> dict:
    cfg = cfg if cfg is not None else CostConfig()
    basis = build_paper_basis()
    planes = cfg.planes if cfg.planes is not None else basis.digit_planes
    log_Q = cfg.log_Q if cfg.log_Q is not None else basis.log2_Q
    plan = gpu_distribution_plan(cfg.n_db, 2 ** cfg.log_N_db, cfg.slices, planes, cfg.log_N_qry)
    db_bytes = db_size_bytes_int8(cfg.ell, planes, cfg.log_N_db, cfg.log_N_qry)
    return {
        "config": asdict(cfg),
        "planes": planes,
        "log_Q": log_Q,
        "db_bits": db_size_bits(cfg.ell, log_Q, cfg.log_N_db, cfg.log_N_qry),
        "db_bytes_int8": db_bytes,
        "db_gb": db_bytes / GB,
        "a_part_gb": plan.a_bytes / GB,
        "gpu_plan": asdict(plan),
        "per_gpu_gb": plan.per_gpu_gb(),
        "clusters_for_target": clusters_needed(cfg.target_db, plan.n_db),
        "expansion_factor": expansion_factor(cfg.delta, cfg.beta),
        "query_ciphertexts_per_eye": query_ciphertexts(cfg.d, cfg.rho, cfg.beta, cfg.comm.query_log_N),
        "comm": comm_report(cfg.comm),
    }


def _fmt_bytes(n) -> str:
    for unit, size in (("GB", GB), ("MB", MB), ("KB", KB)):
        if n >= size:
            return f"{n / size:g} {unit}"
    return f"{n} B"


def format_report(r: dict) -> str:
    c = r["comm"]
    rows = [
        ("database (int8 planes)", _fmt_bytes(r["db_bytes_int8"])),
        ("a-part GPU", _fmt_bytes(r["gpu_plan"]["a_bytes"])),
        ("b-part GPU (each)", _fmt_bytes(r["gpu_plan"]["b_bytes_per_gpu"])),
        ("clusters for target db", str(r["clusters_for_target"])),
        ("query", _fmt_bytes(c["query_bytes"])),
        ("query ciphertexts", str(c["query_ciphertexts_total"])),
        ("decryptor ciphertext", _fmt_bytes(c["decryptor_ciphertext_bytes"])),
        ("decryption share", _fmt_bytes(c["share_bytes"])),
        ("receiver traffic", _fmt_bytes(c["receiver_bytes"])),
        ("expansion factor", f"{r['expansion_factor']:.4f}"),
    ]
    w = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{w}}  {v}" for k, v in rows)


def write_report(r: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(r, fh, indent=1)
