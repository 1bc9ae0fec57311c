"""Weighted least-squares folding polynomials.

The weight w(x) = alpha * D(x) + 1_P(x) mixes a normal density D (pushing the
polynomial towards 0 where negative scores live) with the indicator of the
positive interval P.  Orthonormalizing the monomials for <f, g>_w reduces the
design to quadrature plus a Cholesky factorization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.stats import norm

from ..errors import ConfigError, IllConditioned
from .polynomial import MONOMIAL, Polynomial

DEFAULT_ORDER = 48
TAIL_SIGMAS = 8.0


@dataclass(frozen=True)
class WeightSpec:
    alpha: float = 1e3
    dist_mean: float = 0.008
    dist_std: float = 0.06
    P_interval: tuple[float, float] = (0.3, 1.0)
    domain: tuple[float, float] | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if not self.dist_std > 0:
            raise ConfigError("dist_std must be positive")
        lo, hi = self.integration_domain
        p0, p1 = self.P_interval
        if not (lo <= p0 <= p1 <= hi):
            raise ConfigError("P_interval must lie inside the integration domain")

    @property
    def integration_domain(self) -> tuple[float, float]:
        if self.domain is not None:
            return tuple(map(float, self.domain))
        return (self.dist_mean - TAIL_SIGMAS * self.dist_std, float(self.P_interval[1]))

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        p0, p1 = self.P_interval
        dens = norm.pdf(x, self.dist_mean, self.dist_std) if self.alpha else 0.0
        return self.alpha * dens + ((x >= p0) & (x <= p1))

    def breakpoints(self) -> np.ndarray:
        """Panel edges: domain ends, P ends, and a sigma grid around the mean."""
        lo, hi = self.integration_domain
        pts = [lo, hi, *self.P_interval]
        pts += list(self.dist_mean + self.dist_std * np.arange(-TAIL_SIGMAS, TAIL_SIGMAS + 1))
        pts = np.unique(np.clip(pts, lo, hi))
        return pts


def unit_weight(domain=(-1.0, 1.0)) -> WeightSpec:
    """w = 1 on domain (alpha = 0, P = domain)."""
    return WeightSpec(alpha=0.0, P_interval=tuple(domain), domain=tuple(domain))


def quadrature(weight: WeightSpec, order: int = DEFAULT_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights (times w) on smooth panels."""
    g, gw = np.polynomial.legendre.leggauss(order)
    edges = weight.breakpoints()
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        mid, half = (a + b) / 2, (b - a) / 2
        x = mid + half * g
        xs.append(x)
        # panels are split at the P edges, so the indicator is constant on each
        ws.append(half * gw * weight(x))
    return np.concatenate(xs), np.concatenate(ws)


def inner(f, g, weight: WeightSpec, order: int = DEFAULT_ORDER) -> float:
    x, w = quadrature(weight, order)
    return float(np.sum(w * f(x) * g(x)))


def _u(weight: WeightSpec, x):
    a, b = weight.integration_domain
    return (2 * x - a - b) / (b - a)


def orthonormal_basis(weight: WeightSpec, d: int, order: int = DEFAULT_ORDER,
                      cond_bound: float = 1e13) -> list[Polynomial]:
    """f_0..f_d orthonormal for <.,.>_w, deg f_i = i, positive leading coefficients."""
    x, w = quadrature(weight, order)
    V = np.vander(_u(weight, x), d + 1, increasing=True)
    G = V.T @ (w[:, None] * V)
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > cond_bound:
        raise IllConditioned(f"Gram matrix condition number {cond:.3g} exceeds {cond_bound:.3g}")
    try:
        L = linalg.cholesky(G, lower=True)
    except linalg.LinAlgError as exc:
        raise IllConditioned("Gram matrix is not positive definite") from exc
    Linv = linalg.solve_triangular(L, np.eye(d + 1), lower=True)
    dom = weight.integration_domain
    return [Polynomial(Linv[i, : i + 1], MONOMIAL, dom) for i in range(d + 1)]


def gram(basis: list[Polynomial], weight: WeightSpec, order: int = DEFAULT_ORDER) -> np.ndarray:
    x, w = quadrature(weight, order)
    F = np.stack([f(x) for f in basis])
    return (F * w) @ F.T


def l2_project(target, basis: list[Polynomial], weight: WeightSpec,
               order: int = DEFAULT_ORDER) -> Polynomial:
    """sum_i <f_i, t>_w f_i: the w-weighted least-squares fit of t."""
    x, w = quadrature(weight, order)
    tx = np.asarray(target(x), dtype=np.float64)
    n = len(basis)
    out = np.zeros(n)
    for f in basis:
        c = float(np.sum(w * f(x) * tx))
        out[: f.coeffs.size] += c * f.coeffs
    return Polynomial(out, MONOMIAL, basis[0].domain)


def fold_target(P_interval):
    p0, p1 = P_interval
    return lambda x: (2 + x) * ((x >= p0) & (x <= p1))


def design_folding_poly(alpha: float = 1e3, mean: float = 0.008, std: float = 0.06,
                        P_interval=(0.3, 1.0), degree: int = 7,
                        order: int = DEFAULT_ORDER) -> Polynomial:
    """Degree-d fit of (2 + x) 1_P(x) under w = alpha N(mean, std) + 1_P."""
    ws = WeightSpec(alpha, mean, std, tuple(P_interval))
    basis = orthonormal_basis(ws, degree, order)
    fit = l2_project(fold_target(P_interval), basis, ws, order)
    meta = {"alpha": alpha, "design_mean": mean, "design_std": std,
            "P_interval": list(P_interval), "target": "(2+x)*1_P(x)"}
    return Polynomial(fit.x_coeffs(), MONOMIAL, None, meta)
