import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from irisfhe.emulator import Emulator, Encoding
from irisfhe.errors import ConfigError, IllConditioned, TargetUnreachable
from irisfhe.poly_design import (ClassifierChain, CountingBackend, EmulatorBackend, FoldingSpec,
                                 Polynomial, WeightSpec, alternation_points, cleaning_eps,
                                 cleaning_polynomial, cleaning_steps, compose_classifier,
                                 design_folding_poly, extrema_on, fold_fixture,
                                 folding_bound_check, gram, l2_project, orthonormal_basis,
                                 ps_eval_plan, ps_evaluate, remez_two_interval, unit_weight)
from irisfhe.poly_design.classifier import smoothstep

CORE = ((-0.15, 0.35), (0.4, 3.8))
POST = ((-0.414, 0.571), (0.585, 1.414))
DESIGN_WEIGHT = WeightSpec(1e3, 0.008, 0.06, (0.3, 1.0))


def horner(coeffs, x):
    acc = np.zeros_like(x)
    for c in coeffs[::-1]:
        acc = acc * x + c
    return acc


def lp_minimax(I0, I1, d, m=3000):
    """Discrete minimax value on a dense grid: a lower bound on the true eps."""
    x = np.concatenate([np.linspace(*I0, m), np.linspace(*I1, m)])
    a, b = I0[0], I1[1]
    u = (2 * x - a - b) / (b - a)
    V = np.polynomial.chebyshev.chebvander(u, d)
    f = (x >= I1[0]).astype(float)
    ones = np.ones((x.size, 1))
    res = linprog(np.r_[np.zeros(d + 1), 1.0], A_ub=np.block([[V, -ones], [-V, -ones]]),
                  b_ub=np.r_[f, -f], bounds=[(None, None)] * (d + 2), method="highs")
    assert res.success
    return res.x[-1]


# ---- weighted L2 ----

def test_legendre_closed_forms():
    basis = orthonormal_basis(unit_weight(), 2)
    want = [[math.sqrt(0.5)], [0, math.sqrt(1.5)],
            [-math.sqrt(2.5) / 2, 0, 3 * math.sqrt(2.5) / 2]]
    for f, w in zip(basis, want):
        assert np.allclose(f.x_coeffs(), w, atol=1e-8)
        assert f.degree == len(w) - 1


def test_design_weight_gram_identity_at_doubled_order():
    basis = orthonormal_basis(DESIGN_WEIGHT, 7)
    G = gram(basis, DESIGN_WEIGHT, order=96)
    assert np.max(np.abs(G - np.eye(8))) < 1e-8
    assert [f.degree for f in basis] == list(range(8))


@settings(max_examples=25, deadline=None)
@given(alpha=st.floats(0, 1e4), mean=st.floats(-0.1, 0.1), std=st.floats(0.02, 0.2),
       p0=st.floats(0.2, 0.5), width=st.floats(0.1, 0.8))
def test_first_basis_vector_has_unit_norm(alpha, mean, std, p0, width):
    w = WeightSpec(alpha, mean, std, (p0, p0 + width), (min(mean - 8 * std, p0), p0 + width))
    f0 = orthonormal_basis(w, 3)[0]
    assert gram([f0], w)[0, 0] == pytest.approx(1.0, abs=1e-8)


def test_ill_conditioned_guard():
    with pytest.raises(IllConditioned):
        orthonormal_basis(DESIGN_WEIGHT, 30)


def test_weight_spec_validation():
    with pytest.raises(ConfigError):
        WeightSpec(dist_std=0.0)
    with pytest.raises(ConfigError):
        WeightSpec(P_interval=(0.3, 2.0), domain=(-0.5, 1.0))


def test_project_square_and_basis_vector():
    basis = orthonormal_basis(DESIGN_WEIGHT, 4)
    sq = l2_project(lambda x: x * x, basis, DESIGN_WEIGHT)
    assert np.allclose(sq.x_coeffs(), [0, 0, 1, 0, 0], atol=1e-8)
    f1 = l2_project(basis[1], basis, DESIGN_WEIGHT)
    assert np.allclose(f1.coeffs, np.pad(basis[1].coeffs, (0, 3)), atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_projection_reproduces_low_degree(coeffs):
    basis = orthonormal_basis(DESIGN_WEIGHT, 7)
    got = l2_project(lambda x: horner(np.array(coeffs), x), basis, DESIGN_WEIGHT).x_coeffs()
    want = np.pad(coeffs, (0, 8 - len(coeffs)))
    assert np.allclose(got, want, atol=1e-8 * max(1.0, np.max(np.abs(coeffs))) * 10)


def test_designed_fold_polynomial_shape():
    g = design_folding_poly()
    assert g.degree == 7
    lo, hi = extrema_on(g, -0.13, 0.13)
    assert max(-lo, hi) < 0.05
    x = np.linspace(0.5, 1.0, 50)
    # away from the jump at 0.3 the fit tracks 2 + x
    assert np.max(np.abs(g(x) - (2 + x))) < 0.6


# ---- Remez ----

def test_remez_symmetric_affine():
    p, eps = remez_two_interval((-2, -1), (1, 2), 1)
    # p = 1/2 + x/3 levels |a - 1/2| = |2a - 1/2| at a = 1/3
    assert eps == pytest.approx(1 / 6, rel=1e-9)
    assert np.allclose(p.x_coeffs(), [0.5, 1 / 3], atol=1e-9)
    assert alternation_points(p, (-2, -1), (1, 2), eps) >= 3


@pytest.mark.parametrize("I0,I1,d", [
    (CORE[0], CORE[1], 15), (POST[0], POST[1], 31), ((-0.25, 0.25), (0.3, 0.48), 15),
    ((-1.0, 0.2), (0.5, 1.0), 7), ((0.0, 0.1), (0.2, 3.0), 4)])
def test_remez_equioscillates_and_is_minimax(I0, I1, d):
    p, eps = remez_two_interval(I0, I1, d)
    assert alternation_points(p, I0, I1, eps) >= d + 2
    lower = lp_minimax(I0, I1, d)
    assert lower <= eps * (1 + 1e-6)
    assert eps <= 1.01 * lower


def test_remez_monotone_in_degree():
    eps = [remez_two_interval(*CORE, d)[1] for d in (7, 9, 11, 13, 15)]
    assert all(b <= a for a, b in zip(eps, eps[1:]))
    assert eps[-1] < 0.5


def test_remez_symmetric_odd_degree():
    e = 0.007
    p, eps = remez_two_interval((-e, e), (1 - e, 1 + e), 7)
    assert p.degree <= 7
    assert alternation_points(p, (-e, e), (1 - e, 1 + e), eps) >= 9


# ---- classifier chains ----

@pytest.mark.parametrize("I0,I1,degrees", [(CORE[0], CORE[1], [15, 15, 7]),
                                           (POST[0], POST[1], [31, 31])])
def test_table_chains_grid_verified(I0, I1, degrees):
    ch = compose_classifier(I0, I1, None, degrees)
    assert ch.degrees == degrees
    assert all(b <= a for a, b in zip(ch.eps_schedule, ch.eps_schedule[1:]))
    assert ch.max_error(100_000) <= ch.eps
    assert ch.verify()


def test_single_stage_when_target_loose():
    eps0 = remez_two_interval(*CORE, 15)[1]
    ch = compose_classifier(*CORE, 0.49, [15, 15, 7])
    assert len(ch.stages) == 1 and ch.eps <= 0.49
    assert ch.eps == pytest.approx(eps0, rel=1e-5)


def test_target_unreachable():
    with pytest.raises(TargetUnreachable):
        compose_classifier(*CORE, 1e-6, [3])


def test_chain_roundtrip():
    ch = compose_classifier(*POST, None, [7, 7])
    back = ClassifierChain.from_dict(ch.to_dict())
    x = ch.grid(1000)
    assert np.array_equal(ch(x), back(x))


def test_saturated_stage_uses_smoothstep():
    assert np.allclose(smoothstep(7).coeffs, [0, 0, 0, 0, 35, -84, 70, -20])
    ch = compose_classifier((-0.25, 0.25), (0.3, 0.48), None, [15, 15, 7])
    assert ch.verify()


def test_cleaning():
    h = cleaning_polynomial()
    assert h(np.array([0.0, 1.0])).tolist() == [0.0, 1.0]
    # worst side of 0 is -eps: h(-e) = 3e^2 + 2e^3
    assert h(np.array([-0.1]))[0] == pytest.approx(cleaning_eps(0.1))
    assert abs(1 - h(np.array([1.1]))[0]) == pytest.approx(cleaning_eps(0.1))
    n = cleaning_steps(0.01, 2.0 ** -88)
    e = 0.01
    for _ in range(n):
        e = cleaning_eps(e)
    assert e <= 2.0 ** -88 and cleaning_eps(0.01) > 2.0 ** -88


# ---- Paterson-Stockmeyer ----

def test_ps_plan_examples():
    assert ps_eval_plan(fold_fixture()).depth == 3
    assert ps_eval_plan(Polynomial([2.5])).nonscalar_mults == 0
    p31 = ps_eval_plan(Polynomial(np.ones(32)))
    assert p31.depth == 5 and p31.nonscalar_mults <= 13


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 64), st.integers(0, 2**32 - 1))
def test_ps_plan_bounds_and_horner(d, seed):
    c = np.random.default_rng(seed).normal(size=d + 1)
    c[-1] = 1.0
    p = Polynomial(c)
    plan = ps_eval_plan(p)
    assert plan.depth == math.ceil(math.log2(d + 1))
    assert plan.nonscalar_mults <= 2 * math.sqrt(d + 1) + math.log2(d + 1)
    be = CountingBackend()
    assert ps_evaluate(p, 0, be, plan) == plan.depth
    x = np.linspace(-1, 1, 257)
    assert np.max(np.abs(ps_evaluate(p, x) - horner(c, x))) < 1e-10


@pytest.mark.parametrize("d", [2, 3, 7, 15, 31])
def test_ps_consumes_exact_levels_in_emulator(d):
    ev = Emulator()
    p = fold_fixture() if d == 7 else Polynomial(np.r_[np.zeros(d), 1.0] * 0.5)
    x = np.linspace(-0.13, 0.13, 16)
    ct = ev.ecd(x, Encoding.SLOT, 40)
    out = ps_evaluate(p, ct, EmulatorBackend(ev))
    assert ct.level - out.level == math.ceil(math.log2(d + 1))
    assert np.max(np.abs(ev.dcd(out) - p(x))) < 1e-9


# ---- folding fixture ----

def test_fixture_values():
    f = fold_fixture()
    assert f(np.array([0.0]))[0] == 0.004105
    lo, hi = extrema_on(f, -0.13, 0.13)
    assert max(-lo, hi) < 0.05
    assert f.degree == 7 and f.to_dict()["coeffs"][7] == 106.553952


def test_folding_bound_check():
    assert folding_bound_check(1 / 32, 1.0, 16)
    assert not folding_bound_check(1 / 31, 1.0, 16)
    a, b, k = 1 / 32, 1.0, 16
    assert k * a < b - (k - 1) * a


@settings(max_examples=50)
@given(st.floats(0, 10), st.floats(0, 10), st.integers(1, 64))
def test_folding_bound_implies_disjoint(a, b, k):
    if folding_bound_check(a, b, k):
        assert k * a < b - (k - 1) * a


def test_folding_spec_validation():
    FoldingSpec()
    with pytest.raises(ConfigError):
        FoldingSpec(N_f=(-0.1, 0.5), P_f=(0.4, 3.8))
    with pytest.raises(ConfigError):
        FoldingSpec(p1=1.5)
