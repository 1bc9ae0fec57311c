import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irisfhe.emulator import Emulator, Encoding
from irisfhe.errors import ConfigError, GapCollapsed, ModulusBudget, ModulusExhausted, ZeroOverlap
from irisfhe.iris_core import IrisTemplate, rotate, to_masked
from irisfhe.pipeline import (PipelineConfig, discretize, discretize_params, encrypt_query_bits,
                              fold_group, fold_shadow, make_instance, normalize, or2, or_tree,
                              pack_query, post_chain, postprocess_clean, preprocess_query,
                              query_bits, rotate_or, run_alg1, run_alg2, _or_bound)
from irisfhe.poly_design import fold_fixture

SMALL = PipelineConfig(n_db=2048, d=1024, rho=8, batch=2, fold_k=4)


@pytest.fixture(scope="module")
def planted():
    return make_instance(SMALL, 1, plant_rate=1.0)


@pytest.fixture(scope="module")
def unplanted():
    return make_instance(SMALL, 2, plant_rate=0.0)


def template(rng, d=64, density=0.9):
    return IrisTemplate(rng.integers(0, 2, d), (rng.random(d) < density).astype(np.int64))


def slot_ct(ev, v, level=20, scale=40):
    return ev.ecd(np.asarray(v, float), Encoding.SLOT, scale, level=level,
                  log_ring_degree=int(math.log2(np.shape(v)[-1])), ci=True)


# ---- query side ----

def bottom_bits(ev, bits):
    return ev.ecd(np.asarray(bits, float), Encoding.COEFF, 40, level=0, log_ring_degree=4, ci=True)


def test_pack_beta_one_is_identity():
    ev = Emulator()
    bits = bottom_bits(ev, np.random.default_rng(0).integers(0, 2, (2, 3, 16)))
    assert np.array_equal(pack_query(ev, bits, 1).message, bits.message)


def test_pack_little_endian():
    ev = Emulator()
    bits = bottom_bits(ev, np.array([1, 0, 1, 1])[None, :, None] * np.ones((1, 4, 16)))
    packed = pack_query(ev, bits, 4)
    assert packed.batch_shape == (1, 1)
    assert np.all(packed.message == 13)


def test_pack_headroom_and_padding():
    ev = Emulator()
    bits = bottom_bits(ev, np.zeros((1, 4, 16)))
    with pytest.raises(ModulusBudget):
        pack_query(ev, bits, 4, delta_bits=40)
    with pytest.raises(ConfigError):
        pack_query(ev, bits, 3)


def test_thirty_one_rotations_pack_into_eight(rng):
    cfg = PipelineConfig(n_db=16, d=16, rho=31, batch=1, beta=4)
    ev = Emulator()
    q = template(rng, 16)
    codes, _ = query_bits([q], cfg.rho)
    bits = encrypt_query_bits(ev, codes, cfg)
    assert bits.batch_shape == (1, 32)
    assert pack_query(ev, bits, cfg.beta).batch_shape == (1, 8)


def run_preprocess(queries, rho, beta=4):
    cfg = PipelineConfig(n_db=queries[0].d, d=queries[0].d, rho=rho, batch=len(queries),
                         fold_k=1, beta=beta)
    ev = Emulator(trace=True)
    codes, masks = query_bits(queries, rho)
    packed = pack_query(ev, encrypt_query_bits(ev, codes, cfg), beta, cfg.query_delta_bits)
    return ev, preprocess_query(ev, packed, beta, rho, masks)


def test_preprocess_recovers_masked_bitvectors(rng):
    qs = [template(rng) for _ in range(2)]
    ev, ct = run_preprocess(qs, 7)
    assert ct.batch_shape == (2, 7)
    for e, q in enumerate(qs):
        for r in range(7):
            assert np.array_equal(ct.message[e, r], to_masked(rotate(q, r)).values)
    assert ev.bts_count("query") == 2 * 2    # two packed ciphertexts per eye
    assert min(row.level_after for row in ev.trace) >= 0


def test_preprocess_all_zero_code_gives_mask(rng):
    mask = (rng.random(64) < 0.8).astype(np.int64)
    q = IrisTemplate(np.zeros(64, np.int64), mask)
    _, ct = run_preprocess([q], 1)
    assert np.array_equal(ct.message[0, 0], mask)


# ---- normalization ----

def test_normalize_full_masks_divides_by_d():
    ev = Emulator()
    d = 16
    scores = slot_ct(ev, np.arange(d, dtype=float).reshape(1, 1, 1, d), level=5, scale=23)
    out = normalize(ev, scores, np.ones((1, 1, d)), np.ones((d, d)))
    assert np.allclose(out.message, np.arange(d) / d)
    assert out.level == 4


def test_normalize_zero_overlap():
    ev = Emulator()
    d = 16
    scores = slot_ct(ev, np.ones((1, 1, 1, d)), level=5, scale=23)
    qm = np.zeros((1, 1, d))
    qm[0, 0, 0] = 1
    dm = np.ones((d, d))
    dm[3, 0] = 0
    with pytest.raises(ZeroOverlap):
        normalize(ev, scores, qm, dm)


# ---- folding ----

def test_fold_group_single_rotation_is_f():
    ev = Emulator()
    f = fold_fixture()
    x = np.random.default_rng(1).uniform(-0.13, 0.13, (1, 2, 16))
    out = fold_group(ev, slot_ct(ev, x, level=4, scale=23), f)
    assert np.allclose(out.message, f(x[0]), atol=1e-9)
    assert out.level == 1


def test_fold_group_matches_shadow(planted):
    cfg = SMALL
    ev = Emulator()
    f = cfg.fold_polynomial()
    rng = np.random.default_rng(3)
    S = rng.uniform(-0.2, 0.2, (cfg.n_db, cfg.rho))
    x = S.T.reshape(cfg.rho, cfg.slices, cfg.d)
    k = cfg.fold_k
    want, _, _ = fold_shadow(cfg, S, f)
    for g in range(cfg.groups):
        got = fold_group(ev, slot_ct(ev, x[g * k:(g + 1) * k], level=4, scale=23), f)
        assert np.allclose(got.message, want[g], atol=1e-9)


def test_planted_instances_respect_folding_assumption(planted):
    from irisfhe.iris_core import rotations, score_matrices
    f = SMALL.fold_polynomial()
    for q in planted.queries:
        inner, ov = score_matrices(rotations(q, SMALL.rho), planted.db)
        _, _, cnt = fold_shadow(SMALL, inner / ov, f)
        assert cnt.max() <= 1


# ---- discretization ----

def test_discretize_params_defaults():
    dp = discretize_params(5, 13.0, 0.25)
    assert (dp.n_prime, dp.p_prime, dp.tau) == (13, 19, 19)
    assert dp.I0[1] == pytest.approx((19 - 1 + 0.25) / 32)
    assert dp.I1[0] == pytest.approx((19 - 0.25) / 32)
    assert discretize_params(5, 13.0, 0.25, "midpoint").tau == 16


def test_discretize_gap_collapses():
    with pytest.raises(GapCollapsed):
        discretize_params(5, 16.0, 0.25)
    with pytest.raises(GapCollapsed):
        discretize_params(5, 13.0, 0.75, "p_prime")


def test_discretize_maps_bits():
    ev = Emulator()
    v = np.array([0.0, 1.0, 1e-3, 1 - 2e-3] * 4)
    out, margin = discretize(ev, slot_ct(ev, v, level=10), SMALL)
    assert margin > 0
    assert np.allclose(out.message, np.round(v), atol=post_chain(SMALL).eps)


# ---- OR and cleaning ----

def test_or_truth_table():
    ev = Emulator()
    a = slot_ct(ev, [0, 0, 1, 1] * 4)
    b = slot_ct(ev, [0, 1, 0, 1] * 4)
    assert np.array_equal(or2(ev, a, b).message, [0, 1, 1, 1] * 4)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=9), st.floats(0, 0.01), st.integers(0, 2**32 - 1))
def test_or_tree_error_propagation(bits, eps, seed):
    ev = Emulator()
    rng = np.random.default_rng(seed)
    truth = np.array(bits, float)[:, None] * np.ones((1, 16))
    noisy = truth + np.where(truth > 0, -1, 1) * rng.uniform(0, eps, truth.shape)
    out = or_tree(ev, slot_ct(ev, noisy))
    depth = math.ceil(math.log2(len(bits))) if len(bits) > 1 else 0
    assert np.max(np.abs(out.message - float(any(bits)))) <= _or_bound(eps, depth) + 1e-12


def test_rotate_or_spreads_to_every_slot():
    ev = Emulator()
    v = np.zeros(16)
    v[5] = 1
    out = rotate_or(ev, slot_ct(ev, v))
    assert np.array_equal(out.message, np.ones(16))
    assert np.array_equal(rotate_or(ev, slot_ct(ev, np.zeros(16))).message, np.zeros(16))


def test_postprocess_clean_reaches_target():
    ev = Emulator()
    out, eps = postprocess_clean(ev, slot_ct(ev, [0.0, 1.0] * 8), SMALL)
    assert eps <= 2.0 ** -88
    assert np.max(np.abs(out.message - [0.0, 1.0] * 8)) <= 2.0 ** -88


# ---- end to end ----

@pytest.mark.parametrize("run", [run_alg1, run_alg2])
def test_planted_matches_found(run, planted):
    r = run(SMALL, planted.queries, planted.db, Emulator(trace=True))
    assert planted.expected == [1, 1]
    assert r.bits.tolist() == planted.expected
    assert r.report["agree"] and r.report["min_level"] >= 0
    assert r.report["ops"].get("out_of_range", 0) == 0
    assert r.report["discretize_margin"] > 0


@pytest.mark.parametrize("run", [run_alg1, run_alg2])
def test_no_match_gives_zero(run, unplanted):
    r = run(SMALL, unplanted.queries, unplanted.db)
    assert r.bits.tolist() == [0, 0]
    assert r.report["final_deviation"] <= 2.0 ** -88


def test_bootstrap_accounting(planted):
    cfg = SMALL
    B, L = cfg.batch, cfg.slices
    r1 = run_alg1(cfg, planted.queries, planted.db)
    r2 = run_alg2(cfg, planted.queries, planted.db)
    assert r1.report["bts"]["pre"] == B * cfg.rho * L
    assert r1.report["bts"]["discretize"] == B * cfg.rho * L
    assert r2.report["bts"]["pre"] == B * cfg.groups * L
    assert r2.report["bts"]["discretize"] == B * L
    assert r1.report["bts"]["pre"] / r2.report["bts"]["pre"] == cfg.fold_k


def test_sum_grouping_agrees(planted):
    cfg = replace(SMALL, final_grouping="sum")
    r = run_alg2(cfg, planted.queries, planted.db)
    assert r.report["agree"]


def test_noise_injection_agrees(planted):
    r = run_alg2(SMALL, planted.queries, planted.db, Emulator(inject=True, seed=5))
    assert r.report["agree"]
    assert r.report["final_deviation"] <= 2.0 ** -30


def test_short_chain_exhausts_modulus(planted):
    cfg = replace(SMALL, query_level=1)
    with pytest.raises(ModulusExhausted):
        run_alg2(cfg, planted.queries, planted.db)


# ---- config ----

def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(rho=8, fold_k=9)
    with pytest.raises(ConfigError):
        PipelineConfig(d=1000, n_db=2000)
    with pytest.raises(ConfigError):
        PipelineConfig(n_db=1000)
    with pytest.raises(ConfigError):
        PipelineConfig(final_grouping="xor")
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"rho": 8, "colour": "blue"})
    cfg = PipelineConfig(rho=8, fold_k=4)
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.groups == 2
