"""Paterson-Stockmeyer evaluation in the Chebyshev basis.

Baby steps are T_1..T_{B-1} with B = 2^b, giant steps are T_B, T_2B, T_4B, ...
A polynomial of degree >= B is split as p = q * T_G + r with G the largest
giant step <= deg p, using T_G T_j = (T_{G+j} + T_{G-j}) / 2.  Products need
ceil(log2 d) levels; the scalar coefficients are applied lazily and their
rescale is charged once at the end, so an evaluation consumes exactly
ceil(log2(d + 1)) levels.

Plans run on any backend exposing mul / mul_const / add / sub / add_const,
which lets the same code drive numpy arrays, depth counters and the emulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .polynomial import Polynomial


class ScalarBackend:
    """Plain numpy arithmetic."""

    def mul(self, a, b):
        return a * b

    def mul_const(self, a, c):
        return a * c

    def add(self, a, b):
        return a + b

    def sub(self, a, b):
        return a - b

    def add_const(self, a, c):
        return a + c


class CountingBackend:
    """Values are multiplicative depths; counts nonscalar products."""

    def __init__(self):
        self.mults = 0

    def mul(self, a, b):
        self.mults += 1
        return max(a, b) + 1

    def mul_const(self, a, c):
        return a

    def add(self, a, b):
        return max(a, b)

    sub = add

    def add_const(self, a, c):
        return a

    def settle(self, out, x, depth):
        return max(out, x + depth)


class EmulatorBackend:
    """Drives an Emulator: products are rescaled, operands level-aligned."""

    def __init__(self, ev):
        self.ev = ev

    def mul(self, a, b):
        a, b = self.ev.match_levels(a, b)
        return self.ev.rescale(self.ev.mult(a, b))

    def mul_const(self, a, c):
        return self.ev.mult_const(a, c)

    def add(self, a, b):
        a, b = self.ev.match_levels(a, b)
        return self.ev.add(a, b)

    def sub(self, a, b):
        a, b = self.ev.match_levels(a, b)
        return self.ev.sub(a, b)

    def add_const(self, a, c):
        return self.ev.add_const(a, c)

    def settle(self, out, x, depth):
        target = x.level - depth
        return self.ev.level_down(out, target) if out.level > target else out


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


class _Powers:
    """Lazily built Chebyshev powers T_i(u) with minimal depth."""

    def __init__(self, u, be):
        self.be = be
        self.T = {1: u}

    def __getitem__(self, i: int):
        if i not in self.T:
            be = self.be
            if _is_pow2(i):
                h = self[i // 2]
                self.T[i] = be.add_const(be.mul_const(be.mul(h, h), 2.0), -1.0)
            else:
                a = 1 << (i.bit_length() - 1)
                m = i - a
                prod = be.mul_const(be.mul(self[a], self[m]), 2.0)
                self.T[i] = be.sub(prod, self[a - m])
        return self.T[i]


def _trim(c: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(c)
    return c[: nz[-1] + 1] if nz.size else c[:1]


def _block(c, T: _Powers, be):
    acc = None
    for i in range(1, len(c)):
        if c[i] != 0:
            term = be.mul_const(T[i], float(c[i]))
            acc = term if acc is None else be.add(acc, term)
    if acc is None:
        acc = be.mul_const(T[1], 0.0)
    return be.add_const(acc, float(c[0])) if c[0] != 0 else acc


def _split(c: np.ndarray, G: int):
    """Chebyshev division: c = q * T_G + r with deg r < G."""
    deg = len(c) - 1
    q = np.empty(deg - G + 1)
    q[0] = c[G]
    q[1:] = 2.0 * c[G + 1:]
    r = c[:G].copy()
    for j in range(1, q.size):
        r[G - j] -= q[j] / 2.0
    return q, r


def _eval(c: np.ndarray, T: _Powers, B: int, be):
    c = _trim(c)
    deg = len(c) - 1
    if deg < B:
        return _block(c, T, be)
    G = B
    while 2 * G <= deg:
        G *= 2
    q, r = _split(c, G)
    q = _trim(q)
    if len(q) == 1:
        head = be.mul_const(T[G], float(q[0]))
    else:
        head = be.mul(_eval(q, T, B, be), T[G])
    r = _trim(r)
    if len(r) == 1 and r[0] == 0:
        return head
    if len(r) == 1:
        return be.add_const(head, float(r[0]))
    return be.add(head, _eval(r, T, B, be))


def _input_map(p: Polynomial, x, be):
    s, t = p.affine
    u = x if s == 1.0 else be.mul_const(x, s)
    return u if t == 0.0 else be.add_const(u, t)


@dataclass(frozen=True)
class PSPlan:
    degree: int
    baby_bits: int
    nonscalar_mults: int
    depth: int
    product_depth: int

    @property
    def baby_steps(self) -> int:
        return 1 << self.baby_bits

    @property
    def giant_steps(self) -> list[int]:
        g, out = self.baby_steps, []
        while g <= self.degree:
            out.append(g)
            g *= 2
        return out


def _cheb(p: Polynomial) -> np.ndarray:
    return np.asarray(p.to_chebyshev().coeffs, dtype=np.float64)


def _count(c: np.ndarray, b: int) -> tuple[int, int]:
    be = CountingBackend()
    T = _Powers(0, be)
    depth = _eval(c, T, 1 << b, be)
    return be.mults, depth


def ps_eval_plan(p: Polynomial) -> PSPlan:
    """Baby-step size minimizing nonscalar products within depth ceil(log2(d + 1))."""
    c = _trim(_cheb(p))
    d = len(c) - 1
    if d == 0:
        return PSPlan(0, 0, 0, 0, 0)
    target = math.ceil(math.log2(d + 1))
    best = None
    for b in range(1, target + 1):
        mults, depth = _count(c, b)
        if depth > target:
            continue
        if best is None or mults < best.nonscalar_mults:
            best = PSPlan(d, b, mults, target, depth)
    if best is None:  # pragma: no cover - every b keeps optimal depth
        raise RuntimeError("no baby-step size reaches optimal depth")
    return best


def ps_evaluate(p: Polynomial, x, backend=None, plan: PSPlan | None = None):
    """Evaluate p at x (array or ciphertext) on the given backend."""
    be = backend if backend is not None else ScalarBackend()
    plan = plan if plan is not None else ps_eval_plan(p)
    c = _trim(_cheb(p))
    u = _input_map(p, x, be)
    if len(c) == 1:
        out = be.add_const(be.mul_const(u, 0.0), float(c[0]))
    else:
        out = _eval(c, _Powers(u, be), plan.baby_steps, be)
    settle = getattr(be, "settle", None)
    return settle(out, x, plan.depth) if settle else out


def evaluate_chain(chain, x, backend=None):
    """Apply every stage of a ClassifierChain (or a list of polynomials)."""
    stages = chain.stages if hasattr(chain, "stages") else chain
    for p in stages:
        x = ps_evaluate(p, x, backend)
    return x
