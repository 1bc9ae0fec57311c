"""Polynomials in monomial or Chebyshev form, with an optional affine domain map."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np
from numpy.polynomial import chebyshev as C
from numpy.polynomial import polynomial as P

MONOMIAL = "monomial"
CHEBYSHEV = "chebyshev"


@dataclass(frozen=True, eq=False)
class Polynomial:
    """p(x) = sum_i c_i B_i(u), u = (2x - a - b) / (b - a).

    B_i is x^i or T_i depending on ``basis``.  Without a domain, u = x.
    """

    coeffs: np.ndarray
    basis: str = MONOMIAL
    domain: tuple[float, float] | None = None
    metadata: dict | None = None

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=np.float64)).copy()
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coefficients must be a nonempty 1-D vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        if self.basis not in (MONOMIAL, CHEBYSHEV):
            raise ValueError(f"unknown basis {self.basis!r}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.domain is not None:
            a, b = map(float, self.domain)
            if not b > a:
                raise ValueError("domain must satisfy a < b")
            object.__setattr__(self, "domain", (a, b))

    @property
    def degree(self) -> int:
        nz = np.flatnonzero(self.coeffs)
        return int(nz[-1]) if nz.size else 0

    def to_u(self, x):
        if self.domain is None:
            return np.asarray(x, dtype=np.float64)
        a, b = self.domain
        return (2 * np.asarray(x, dtype=np.float64) - a - b) / (b - a)

    @property
    def affine(self) -> tuple[float, float]:
        """(s, t) with u = s * x + t."""
        if self.domain is None:
            return 1.0, 0.0
        a, b = self.domain
        return 2 / (b - a), -(a + b) / (b - a)

    def __call__(self, x):
        u = self.to_u(x)
        if self.basis == CHEBYSHEV:
            return C.chebval(u, self.coeffs)
        return P.polyval(u, self.coeffs)

    def derivative(self) -> "Polynomial":
        s, _ = self.affine
        d = C.chebder(self.coeffs) if self.basis == CHEBYSHEV else P.polyder(self.coeffs)
        return Polynomial(np.atleast_1d(d) * s, self.basis, self.domain)

    def to_chebyshev(self) -> "Polynomial":
        if self.basis == CHEBYSHEV:
            return self
        return Polynomial(C.poly2cheb(self.coeffs), CHEBYSHEV, self.domain, self.metadata)

    def to_monomial(self) -> "Polynomial":
        if self.basis == MONOMIAL:
            return self
        return Polynomial(C.cheb2poly(self.coeffs), MONOMIAL, self.domain, self.metadata)

    def x_coeffs(self) -> np.ndarray:
        """Monomial coefficients in the original variable x."""
        m = self.to_monomial().coeffs
        s, t = self.affine
        out = np.zeros(1)
        lin = np.array([t, s])
        power = np.ones(1)
        for c in m:
            out = P.polyadd(out, c * power)
            power = P.polymul(power, lin)
        return np.pad(out, (0, max(0, m.size - out.size)))[: m.size]

    def to_dict(self) -> dict:
        return {"degree": self.degree, "coeffs": [float(c) for c in self.coeffs],
                "basis": self.basis, "domain": list(self.domain) if self.domain else None,
                "metadata": self.metadata or {}}

    @classmethod
    def from_dict(cls, d: dict) -> "Polynomial":
        dom = d.get("domain")
        return cls(d["coeffs"], d.get("basis", MONOMIAL), tuple(dom) if dom else None,
                   d.get("metadata") or None)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "Polynomial":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def load_fixture(name: str = "fold_poly_k16") -> Polynomial:
    text = resources.files("irisfhe.data").joinpath(f"{name}.json").read_text()
    return Polynomial.from_dict(json.loads(text))


def fold_fixture() -> Polynomial:
    """The published degree-7 folding polynomial for k = 16."""
    return load_fixture("fold_poly_k16")


def critical_points(p: Polynomial) -> np.ndarray:
    """Real roots of p' in the x variable."""
    d = p.derivative()
    if d.degree == 0:
        return np.zeros(0)
    c = d.coeffs[: d.degree + 1]
    roots = C.chebroots(c) if d.basis == CHEBYSHEV else P.polyroots(c)
    roots = roots[np.abs(roots.imag) < 1e-9].real
    s, t = d.affine
    return (roots - t) / s


def extrema_on(p: Polynomial, lo: float, hi: float, grid: int = 100_001) -> tuple[float, float]:
    """(min, max) of p on [lo, hi] from a dense grid refined at derivative roots."""
    xs = np.linspace(lo, hi, grid)
    xr = critical_points(p)
    vals = p(np.concatenate([xs, xr[(xr >= lo) & (xr <= hi)]]))
    return float(vals.min()), float(vals.max())


def max_abs_on(p: Polynomial, lo, hi) -> np.ndarray:
    """Entry-wise max of |p| over [lo_i, hi_i] (endpoints plus interior critical points)."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    out = np.maximum(np.abs(p(lo)), np.abs(p(hi)))
    for r in critical_points(p):
        inside = (lo <= r) & (r <= hi)
        if inside.any():
            out = np.where(inside, np.maximum(out, abs(float(p(np.array([r]))[0]))), out)
    return out
