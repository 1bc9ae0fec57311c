"""Multi-interval Remez exchange for the two-interval step function.

The target is 0 on I0 and 1 on I1.  Polynomials are represented in the
Chebyshev basis on the hull of I0 and I1, which keeps the linear systems well
conditioned up to degree 31 and beyond.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.optimize import linprog, minimize_scalar

from ..errors import NonConvergence
from .polynomial import CHEBYSHEV, Polynomial

GRID_PER_INTERVAL = 20_000
ABS_FLOOR = 1e-14


def _check_intervals(I0, I1):
    a0, b0 = map(float, I0)
    a1, b1 = map(float, I1)
    if a0 > b0 or a1 > b1:
        raise ValueError("intervals must satisfy lo <= hi")
    if not b0 < a1:
        raise ValueError("I0 must lie strictly left of I1")
    return (a0, b0), (a1, b1)


def _initial_reference(I0, I1, n: int) -> np.ndarray:
    """n Chebyshev-like points split between the intervals by length."""
    l0, l1 = I0[1] - I0[0], I1[1] - I1[0]
    n0 = int(round(n * l0 / (l0 + l1))) if l0 + l1 > 0 else n // 2
    n0 = min(max(n0, 1), n - 1)
    n1 = n - n0

    def nodes(iv, m):
        if m == 1:
            return np.array([(iv[0] + iv[1]) / 2])
        t = np.cos(np.pi * np.arange(m)[::-1] / (m - 1))
        return (iv[0] + iv[1]) / 2 + (iv[1] - iv[0]) / 2 * t

    return np.concatenate([nodes(I0, n0), nodes(I1, n1)])


def _symmetric(I0, I1, rel: float = 1e-12) -> bool:
    """I1 is the mirror image of I0 about the centre of the hull."""
    scale = max(1.0, abs(I0[0]), abs(I1[1]))
    return (abs((I0[1] - I0[0]) - (I1[1] - I1[0])) <= rel * scale
            and abs((I0[0] + I1[1]) - (I0[1] + I1[0])) <= rel * scale)


class _Problem:
    def __init__(self, I0, I1, d):
        self.I0, self.I1, self.d = I0, I1, d
        self.a, self.b = I0[0], I1[1]

    def u(self, x):
        return (2 * np.asarray(x) - self.a - self.b) / (self.b - self.a)

    def target(self, x):
        return (np.asarray(x) >= self.I1[0]).astype(np.float64)

    def err(self, c, x):
        return C.chebval(self.u(x), c) - self.target(x)


def _solve_reference(prob: _Problem, ref: np.ndarray):
    n = prob.d + 2
    A = np.empty((n, n))
    A[:, : prob.d + 1] = C.chebvander(prob.u(ref), prob.d)
    A[:, -1] = (-1.0) ** np.arange(n)
    try:
        sol = np.linalg.solve(A, prob.target(ref))
    except np.linalg.LinAlgError as exc:
        raise NonConvergence("reference system is singular") from exc
    return sol[:-1], sol[-1]


def _local_extrema(prob: _Problem, c, grid_n: int):
    """Candidate extrema of |err| on both intervals: interval ends plus interior peaks."""
    pts, vals = [], []
    for lo, hi in (prob.I0, prob.I1):
        if hi == lo:
            pts.append(np.array([lo]))
            vals.append(prob.err(c, pts[-1]))
            continue
        x = np.linspace(lo, hi, grid_n)
        e = prob.err(c, x)
        ae = np.abs(e)
        inner = np.flatnonzero((ae[1:-1] >= ae[:-2]) & (ae[1:-1] > ae[2:])) + 1
        for i in inner:
            # refine the interior peak between its grid neighbours
            f = lambda t, s=np.sign(e[i]): -s * float(prob.err(c, t))
            r = minimize_scalar(f, bounds=(x[i - 1], x[i + 1]), method="bounded",
                                options={"xatol": 1e-14 * max(1.0, abs(x[i]))})
            xi = r.x if -r.fun >= ae[i] else x[i]
            pts.append(np.array([xi]))
            vals.append(prob.err(c, np.array([xi])))
        pts.append(x[[0, x.size - 1]])
        vals.append(e[[0, x.size - 1]])
    px = np.concatenate(pts)
    pv = np.concatenate(vals)
    order = np.argsort(px, kind="stable")
    px, pv = px[order], pv[order]
    keep = np.ones(px.size, bool)
    keep[1:] = np.diff(px) > 0
    return px[keep], pv[keep]


def _alternating(px, pv, n):
    """Reduce candidates to n alternating-sign points of largest |err|."""
    xs, vs = [], []
    for x, v in zip(px, pv):
        if v == 0:
            continue
        if vs and np.sign(v) == np.sign(vs[-1]):
            if abs(v) > abs(vs[-1]):
                xs[-1], vs[-1] = x, v
            continue
        xs.append(x)
        vs.append(v)
    while len(xs) > n:
        if len(xs) == n + 1:
            drop = 0 if abs(vs[0]) < abs(vs[-1]) else len(xs) - 1
            del xs[drop], vs[drop]
            continue
        i = int(np.argmin(np.abs(vs)))
        if i in (0, len(xs) - 1):
            del xs[i], vs[i]
            continue
        # drop the smallest interior point together with its smaller neighbour
        j = i - 1 if abs(vs[i - 1]) < abs(vs[i + 1]) else i + 1
        for k in sorted((i, j), reverse=True):
            del xs[k], vs[k]
    return np.array(xs), np.array(vs)


def _lp_reference(prob: _Problem, n: int, grid_n: int):
    """Alternation set of the discrete minimax fit on a Chebyshev-spaced grid."""
    m = max(40 * n, 400)
    xs = np.concatenate([_initial_reference(iv, iv, 2 * m)[:m] if iv[1] > iv[0] else [iv[0]]
                         for iv in (prob.I0, prob.I1)])
    xs = np.unique(xs)
    V = C.chebvander(prob.u(xs), prob.d)
    f = prob.target(xs)
    k = prob.d + 1
    # minimize t subject to -t <= V c - f <= t
    ones = np.ones((xs.size, 1))
    A = np.block([[V, -ones], [-V, -ones]])
    b = np.concatenate([f, -f])
    cost = np.zeros(k + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * (k + 1), method="highs")
    if not res.success:
        return None
    px, pv = _local_extrema(prob, res.x[:k], grid_n)
    xs, _ = _alternating(px, pv, n)
    return xs if xs.size == n else None


def _exchange(prob: _Problem, ref, n, max_iter, tol, grid_n):
    for _ in range(max_iter):
        c, _ = _solve_reference(prob, ref)
        px, pv = _local_extrema(prob, c, grid_n)
        xs, vs = _alternating(px, pv, n)
        if xs.size < n:
            return None
        hi, lo = np.max(np.abs(pv)), np.min(np.abs(vs))
        ref = xs
        # absolute floor: errors near 1e-8 level only to double rounding of the unit target
        if hi - lo <= tol * hi + ABS_FLOOR:
            return ref
    raise NonConvergence(f"Remez did not level after {max_iter} iterations")


def remez_two_interval(I0, I1, d: int, max_iter: int = 100, tol: float = 1e-9,
                       grid_n: int = GRID_PER_INTERVAL) -> tuple[Polynomial, float]:
    """Minimax degree-d approximation of the 0/1 step on I0 u I1.

    Returns the polynomial (Chebyshev basis on the hull) and the measured
    maximum error eps on I0 u I1.  The exchange starts from Chebyshev nodes
    split by interval length; when that seed loses alternation across the gap
    (typical for symmetric interval pairs) it restarts from the extremal set
    of a discrete linear-programming minimax fit.
    """
    if d < 1:
        raise ValueError("degree must be >= 1")
    I0, I1 = _check_intervals(I0, I1)
    if d % 2 == 1 and _symmetric(I0, I1):
        # the best fit is p - 1/2 odd about the midpoint, so degrees d and d + 1
        # share it; the even count d + 3 of alternation points needs the larger system
        p, eps = remez_two_interval(I0, I1, d + 1, max_iter, tol, grid_n)
        c = np.array(p.coeffs)
        if abs(c[-1]) > 1e-8 * max(1.0, np.max(np.abs(c))):
            raise NonConvergence("symmetric fit kept an even leading term")
        return Polynomial(c[:-1], CHEBYSHEV, p.domain, p.metadata), eps
    prob = _Problem(I0, I1, d)
    n = d + 2
    ref = _exchange(prob, _initial_reference(I0, I1, n), n, max_iter, tol, grid_n)
    if ref is None:
        seed = _lp_reference(prob, n, grid_n)
        ref = None if seed is None else _exchange(prob, seed, n, max_iter, tol, grid_n)
    if ref is None:
        raise NonConvergence(f"could not keep {n} alternation points for degree {d}")
    c, E = _solve_reference(prob, ref)
    px, pv = _local_extrema(prob, c, grid_n)
    eps = float(np.max(np.abs(pv)))
    xs, vs = _alternating(px, pv, n)
    if xs.size < n or np.min(np.abs(vs)) < 0.99 * eps:
        raise NonConvergence("final error curve does not equioscillate")
    meta = {"I0": list(I0), "I1": list(I1), "eps": eps}
    return Polynomial(c, CHEBYSHEV, (I0[0], I1[1]), meta), eps


def alternation_points(p: Polynomial, I0, I1, eps: float, rel_tol: float = 1e-3,
                       grid: int = 100_000) -> int:
    """Count sign-alternating points where |p - step| reaches eps (dense grid)."""
    I0, I1 = _check_intervals(I0, I1)
    l0, l1 = I0[1] - I0[0], I1[1] - I1[0]
    n0 = max(2, int(grid * l0 / (l0 + l1)))
    xs = np.concatenate([np.linspace(*I0, n0), np.linspace(*I1, max(2, grid - n0))])
    e = p(xs) - (xs >= I1[0])
    hit = np.abs(e) >= (1 - rel_tol) * eps
    signs = np.sign(e[hit])
    if signs.size == 0:
        return 0
    return int(1 + np.count_nonzero(signs[1:] != signs[:-1]))
