"""Composed classification functions and folding parameters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NonConvergence, TargetUnreachable
from .polynomial import MONOMIAL, Polynomial
from .remez import remez_two_interval

VERIFY_POINTS = 100_000


@dataclass(frozen=True)
class FoldingSpec:
    k: int = 16
    N_f: tuple[float, float] = (-0.13, 0.33)
    P_f: tuple[float, float] = (0.4, 3.8)
    p1: float = 5.3e-11
    p2: float = 5.4e-10

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not self.N_f[1] < self.P_f[0]:
            raise ConfigError("max(N_f) must be below min(P_f)")
        if not (0 <= self.p1 <= 1 and 0 <= self.p2 <= 1):
            raise ConfigError("failure probabilities must lie in [0, 1]")


def folding_bound_check(alpha_bound: float, beta_bound: float, k: int) -> bool:
    """True iff alpha < beta / (2k - 1), i.e. k*alpha < beta - (k-1)*alpha."""
    if alpha_bound < 0 or beta_bound < 0 or k < 1:
        raise ValueError("need alpha, beta >= 0 and k >= 1")
    return alpha_bound * (2 * k - 1) < beta_bound


@dataclass
class ClassifierChain:
    """Stages P_0, P_1, ... whose composition sends I0 near 0 and I1 near 1.

    Stage j > 0 is designed on [-eps_{j-1}, eps_{j-1}] u [1 - eps_{j-1}, 1 + eps_{j-1}].
    """

    stages: list
    I0: tuple[float, float]
    I1: tuple[float, float]
    eps_schedule: list = field(default_factory=list)

    @property
    def eps(self) -> float:
        return self.eps_schedule[-1]

    @property
    def degrees(self) -> list[int]:
        return [p.degree for p in self.stages]

    @property
    def depth(self) -> int:
        return int(sum(int(np.ceil(np.log2(p.degree + 1))) for p in self.stages))

    def stage_intervals(self, j: int):
        if j == 0:
            return self.I0, self.I1
        e = self.eps_schedule[j - 1]
        return (-e, e), (1 - e, 1 + e)

    def __call__(self, x):
        y = np.asarray(x, dtype=np.float64)
        for p in self.stages:
            y = p(y)
        return y

    def grid(self, n: int = VERIFY_POINTS) -> np.ndarray:
        l0 = self.I0[1] - self.I0[0]
        l1 = self.I1[1] - self.I1[0]
        n0 = max(2, int(n * l0 / (l0 + l1)))
        return np.concatenate([np.linspace(*self.I0, n0), np.linspace(*self.I1, max(2, n - n0))])

    def max_error(self, n: int = VERIFY_POINTS) -> float:
        x = self.grid(n)
        return float(np.max(np.abs(self(x) - (x >= self.I1[0]))))

    def verify(self, n: int = VERIFY_POINTS) -> bool:
        return self.max_error(n) <= self.eps

    def to_dict(self) -> dict:
        return {"I0": list(self.I0), "I1": list(self.I1), "eps_schedule": list(self.eps_schedule),
                "stages": [p.to_dict() for p in self.stages]}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierChain":
        return cls([Polynomial.from_dict(s) for s in d["stages"]], tuple(d["I0"]), tuple(d["I1"]),
                   list(d["eps_schedule"]))


# slack on each declared stage error, covering float evaluation between grid points
EPS_SLACK = 1e-9
# below this input error a refining stage's minimax error is under double precision
SATURATED_EPS = 1e-4


def smoothstep(d: int) -> Polynomial:
    """Hermite step of odd degree <= d: 0 and 1 at the ends with m = (d-1)//2 flat derivatives.

    h(x) = x^(m+1) sum_{j<=m} C(m+j, j) (1-x)^j.
    """
    from math import comb
    from numpy.polynomial import polynomial as P
    m = (d - 1) // 2
    acc = np.zeros(1)
    for j in range(m + 1):
        acc = P.polyadd(acc, comb(m + j, j) * P.polypow([1.0, -1.0], j))
    return Polynomial(P.polymul(acc, P.polypow([0.0, 1.0], m + 1)), MONOMIAL)


def _saturated_stage(d: int, e: float):
    p = smoothstep(d)
    x = np.concatenate([np.linspace(-e, e, 2001), np.linspace(1 - e, 1 + e, 2001)])
    err = float(np.max(np.abs(p(x) - (x > 0.5))))
    return p, max(err, 8 * np.finfo(float).eps)


def compose_classifier(I0, I1, eps_target: float | None, degree_schedule) -> ClassifierChain:
    """Recursively compose Remez stages until eps_j <= eps_target.

    With eps_target None the whole schedule is used.
    """
    degrees = list(degree_schedule)
    if not degrees or any(int(d) < 1 for d in degrees):
        raise ValueError("degree schedule must be nonempty with degrees >= 1")
    I0 = tuple(map(float, I0))
    I1 = tuple(map(float, I1))
    stages, eps_list = [], []
    lo, hi = I0, I1
    for j, d in enumerate(degrees):
        try:
            p, eps = remez_two_interval(lo, hi, int(d))
        except NonConvergence:
            if j == 0 or eps_list[-1] > SATURATED_EPS:
                raise
            p, eps = _saturated_stage(int(d), eps_list[-1])
        eps = eps * (1 + 1e-6) + EPS_SLACK
        stages.append(p)
        eps_list.append(eps)
        if eps_target is not None and eps <= eps_target:
            break
        if eps >= 0.5:
            raise TargetUnreachable(f"stage error {eps:.3g} leaves no gap for the next stage")
        lo, hi = (-eps, eps), (1 - eps, 1 + eps)
    if eps_target is not None and eps_list[-1] > eps_target:
        raise TargetUnreachable(
            f"schedule {degrees} reaches eps={eps_list[-1]:.3g} > target {eps_target:.3g}")
    return ClassifierChain(stages, I0, I1, eps_list)


def cleaning_polynomial() -> Polynomial:
    """h(x) = 3x^2 - 2x^3: fixes 0 and 1 and maps eps to 3 eps^2 + 2 eps^3."""
    return Polynomial([0.0, 0.0, 3.0, -2.0], MONOMIAL)


def cleaning_eps(eps: float) -> float:
    return 3 * eps * eps + 2 * eps ** 3


def cleaning_steps(eps: float, target: float) -> int:
    """Number of h applications bringing eps below target (needs eps < 1/2)."""
    if target <= 0:
        raise ValueError("target must be positive")
    n = 0
    while eps > target:
        nxt = cleaning_eps(eps)
        if nxt >= eps:
            raise TargetUnreachable(f"cleaning does not contract eps={eps:.3g}")
        eps, n = nxt, n + 1
    return n


def max_deviation(y) -> float:
    """Largest distance from {0, 1} over an array."""
    y = np.asarray(y, dtype=np.float64)
    return float(np.max(np.minimum(np.abs(y), np.abs(1 - y)))) if y.size else 0.0
