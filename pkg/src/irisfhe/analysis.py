"""Monte-Carlo validation of folding polynomials and false-match accounting.

Three experiment families per trial, with X_i, Y_i drawn from the score model:

    A = sum_{i<k} f(X_i)                  (all negative)
    B = min_{x in P} f(x) + sum_{i<k-1} f(Y_i)
    C = max_{x in P} f(x) + sum_{i<k-1} f(Y_i)

A outside N_f counts towards p1, B or C outside P_f towards p2.  Trials are
split in fixed-size chunks, each seeded by its index through SeedSequence, so
counts do not depend on the number of workers.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, InsufficientTrials
from .iris_core import ScoreModel
from .poly_design import FoldingSpec, Polynomial, critical_points

CHUNK = 1 << 17
GRID = 100_000
HIST_BINS = np.linspace(-1.0, 5.0, 241)
WORKERS_ENV = "IRISFHE_WORKERS"


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


def wilson_interval(successes: int, n: int, z: float | None = None, conf: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return (0.0, 1.0)
    if z is None:
        z = float(norm.ppf(0.5 + conf / 2))
    p = successes / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, centre - half), min(1.0, centre + half))


def range_on(f: Polynomial, lo: float, hi: float) -> tuple[float, float]:
    """min and max of f on [lo, hi]: dense grid plus derivative roots."""
    x = np.linspace(lo, hi, GRID)
    cp = [c for c in critical_points(f) if lo <= c <= hi]
    v = f(np.concatenate([x, np.asarray(cp, dtype=np.float64)]))
    return float(v.min()), float(v.max())


def _horner(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    acc = np.full_like(x, c[-1])
    for a in c[-2::-1]:
        acc *= x
        acc += a
    return acc


@dataclass
class _Job:
    coeffs: np.ndarray
    mean: float
    std: float
    k: int
    N_f: tuple
    P_f: tuple
    f_min: float
    f_max: float
    n: int
    seed: int
    index: int


def _run_chunk(job: _Job):
    ss = np.random.SeedSequence(job.seed, spawn_key=(job.index,))
    rng = np.random.default_rng(ss)
    X = rng.normal(job.mean, job.std, (job.n, 2 * job.k - 1))
    F = _horner(job.coeffs, X)
    A = F[:, :job.k].sum(axis=1)
    Y = F[:, job.k:].sum(axis=1)
    B = job.f_min + Y
    C = job.f_max + Y
    neg = (A < job.N_f[0]) | (A > job.N_f[1])
    b_out = (B < job.P_f[0]) | (B > job.P_f[1])
    c_out = (C < job.P_f[0]) | (C > job.P_f[1])
    return {
        "neg": int(neg.sum()), "pos": int((b_out | c_out).sum()),
        "pos_min": int(b_out.sum()), "pos_max": int(c_out.sum()),
        "hist_neg": np.histogram(A, HIST_BINS)[0], "hist_pos": np.histogram(C, HIST_BINS)[0],
        "extremes": (float(A.min()), float(A.max()), float(B.min()), float(C.max())),
    }


@dataclass
class FoldTrialReport:
    trials: int
    neg_outside_Nf: int
    pos_outside_Pf: int
    pos_min_outside: int
    pos_max_outside: int
    p1: float
    p1_ci: tuple
    p2: float
    p2_ci: tuple
    k: int
    seed: int
    N_f: tuple
    P_f: tuple
    f_min_P: float
    f_max_P: float
    extremes: dict = field(default_factory=dict)
    hist_neg: list = field(default_factory=list, repr=False)
    hist_pos: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        for c in (self.neg_outside_Nf, self.pos_outside_Pf):
            if not 0 <= c <= self.trials:
                raise ValueError("counts must lie in [0, trials]")

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        d = self.to_dict()
        d.pop("hist_neg")
        d.pop("hist_pos")
        with open(path, "w") as fh:
            json.dump(d, fh, indent=1)

    def write_histogram_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lo", "hi", "negative_sums", "positive_max_sums"])
            for lo, hi, a, b in zip(HIST_BINS[:-1], HIST_BINS[1:], self.hist_neg, self.hist_pos):
                w.writerow([f"{lo:.3f}", f"{hi:.3f}", a, b])


def montecarlo_fold(f: Polynomial, model: ScoreModel | None = None, spec: FoldingSpec | None = None,
                    trials: int = 10**6, seed: int = 0, workers: int | None = None,
                    P: tuple | None = None) -> FoldTrialReport:
    """Count folded sums escaping N_f (all negative) and P_f (one score from P).

    P defaults to the model's positive interval.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    model = model if model is not None else ScoreModel()
    spec = spec if spec is not None else FoldingSpec()
    P = tuple(P) if P is not None else model.positive_interval
    f_min, f_max = range_on(f, *P)
    coeffs = np.asarray(f.x_coeffs(), dtype=np.float64)
    jobs = []
    for i, start in enumerate(range(0, trials, CHUNK)):
        jobs.append(_Job(coeffs, model.mean, model.std, spec.k, tuple(spec.N_f), tuple(spec.P_f),
                         f_min, f_max, min(CHUNK, trials - start), seed, i))
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    neg = sum(p["neg"] for p in parts)
    pos = sum(p["pos"] for p in parts)
    ext = np.array([p["extremes"] for p in parts])
    return FoldTrialReport(
        trials=trials, neg_outside_Nf=neg, pos_outside_Pf=pos,
        pos_min_outside=sum(p["pos_min"] for p in parts),
        pos_max_outside=sum(p["pos_max"] for p in parts),
        p1=neg / trials, p1_ci=wilson_interval(neg, trials),
        p2=pos / trials, p2_ci=wilson_interval(pos, trials),
        k=spec.k, seed=seed, N_f=tuple(spec.N_f), P_f=tuple(spec.P_f), f_min_P=f_min, f_max_P=f_max,
        extremes={"neg_min": float(ext[:, 0].min()), "neg_max": float(ext[:, 1].max()),
                  "pos_min": float(ext[:, 2].min()), "pos_max": float(ext[:, 3].max())},
        hist_neg=sum(p["hist_neg"] for p in parts).tolist(),
        hist_pos=sum(p["hist_pos"] for p in parts).tolist())


# --- interval calibration -----------------------------------------------------------

@dataclass(frozen=True)
class CalibratedIntervals:
    N_f: tuple
    P_f: tuple
    N_f_widened: tuple
    trials: int


def widen(interval, margin: float) -> tuple:
    return (interval[0] - margin, interval[1] + margin)


def _tails(sorted_vals: np.ndarray, p: float) -> tuple[float, float]:
    """Interval leaving floor(p n / 2) samples strictly outside on each side."""
    n = sorted_vals.size
    m = int(math.floor(p * n / 2))
    return float(sorted_vals[m]), float(sorted_vals[n - 1 - m])


def calibrate_intervals(f: Polynomial, model: ScoreModel | None = None, k: int = 16,
                        p1: float = 1e-3, p2: float = 1e-3, trials: int = 10**5, seed: int = 0,
                        margin: float = 0.02, P: tuple | None = None) -> CalibratedIntervals:
    """Equal-tail empirical intervals: N_f for the negative sums, P_f for the bracketed ones.

    P_f takes its lower end from the min-over-P family and its upper end from
    the max-over-P family.  N_f is then widened by `margin` on both sides.
    """
    for p in (p1, p2):
        if not 0 < p < 1:
            raise ValueError("targets must lie in (0, 1)")
        if p < 10 / trials:
            raise InsufficientTrials(f"target {p:g} is below the 10/trials resolution of {trials} trials")
    model = model if model is not None else ScoreModel()
    P = tuple(P) if P is not None else model.positive_interval
    f_min, f_max = range_on(f, *P)
    c = np.asarray(f.x_coeffs(), dtype=np.float64)
    rng = np.random.default_rng(seed)
    A = np.zeros(trials)
    Y = np.zeros(trials)
    for start in range(0, trials, CHUNK):
        n = min(CHUNK, trials - start)
        A[start:start + n] = _horner(c, rng.normal(model.mean, model.std, (n, k))).sum(axis=1)
        if k > 1:
            Y[start:start + n] = _horner(c, rng.normal(model.mean, model.std, (n, k - 1))).sum(axis=1)
    A.sort()
    Y.sort()
    N_f = _tails(A, p1)
    # a trial fails on either bracket; split the budget between the two tails
    lo, _ = _tails(f_min + Y, p2)
    _, hi = _tails(f_max + Y, p2)
    return CalibratedIntervals(N_f, (lo, hi), widen(N_f, margin), trials)


def normal_quantile_interval(mean: float, std: float, p: float) -> tuple[float, float]:
    """Equal-tail interval of a normal law with total tail mass p."""
    return (float(norm.ppf(p / 2, mean, std)), float(norm.ppf(1 - p / 2, mean, std)))


# --- pipeline false positive / negative accounting ------------------------------------

def _bits(run, key):
    if isinstance(run, dict):
        return list(run[key])
    return list(run.report[key])


def fp_fn_report(runs, conf: float = 0.95) -> dict:
    """False-positive and false-negative rates of pipeline bits against oracle bits.

    `runs` holds RunResult objects or report dicts with match_bits and oracle_bits.
    """
    fp = fn = neg = pos = 0
    for r in runs:
        got, want = _bits(r, "match_bits"), _bits(r, "oracle_bits")
        if len(got) != len(want):
            raise ValueError("match and oracle bit lists differ in length")
        for g, w in zip(got, want):
            if w:
                pos += 1
                fn += int(not g)
            else:
                neg += 1
                fp += int(bool(g))
    return {
        "runs": len(runs), "oracle_positives": pos, "oracle_negatives": neg,
        "false_positives": fp, "false_negatives": fn,
        "fp_rate": fp / neg if neg else 0.0, "fn_rate": fn / pos if pos else 0.0,
        "fp_ci": wilson_interval(fp, neg, conf=conf), "fn_ci": wilson_interval(fn, pos, conf=conf),
        "confidence": conf,
    }
