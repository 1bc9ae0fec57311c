import numpy as np
import pytest

from irisfhe import emulator as em
from irisfhe.emulator import Emulator, Encoding
from irisfhe.errors import (ConfigError, EncodingMismatch, LevelMismatch, ModulusBudget,
                            ModulusExhausted, NonRealMessage, ProfileMismatch, ScaleMismatch,
                            ShapeMismatch)

N = 16  # CI real slots


@pytest.fixture
def ev():
    return Emulator(trace=True)


def fresh(ev, v, level=None, scale=40):
    return ev.ecd(np.asarray(v, float), Encoding.SLOT, scale, level)


def test_ecd_roundtrip(ev, rng):
    z = fresh(ev, np.zeros(N))
    assert np.array_equal(ev.dcd(z), np.zeros(N))
    assert z.noise_bound_bits == ev.noise.fresh_bits
    inj = Emulator(inject=True, seed=1)
    v = rng.normal(size=N)
    ct = inj.ecd(v, Encoding.SLOT, 40)
    assert np.all(np.abs(inj.dcd(ct) - v) <= ct.error_bound)
    ct23 = ev.ecd(v, Encoding.COEFF, 23, level=5)
    assert ct23.scale_bits == 23 and ct23.log_ring_degree == 4
    with pytest.raises(ShapeMismatch):
        ev.ecd(np.zeros(6), Encoding.SLOT, 40, log_ring_degree=4)


def test_slot_counts(ev):
    c = ev.ecd(np.zeros(8, complex), Encoding.SLOT, 40)
    assert not c.ci and c.log_ring_degree == 4
    r = ev.ecd(np.zeros(16), Encoding.SLOT, 40)
    assert r.ci and r.log_ring_degree == 4


def test_add(ev, rng):
    a, b = fresh(ev, rng.normal(size=N)), fresh(ev, rng.normal(size=N))
    z = fresh(ev, np.zeros(N))
    assert np.array_equal(ev.add(a, z).message, a.message)
    assert np.array_equal(ev.add(a, b).message, ev.add(b, a).message)
    nb = ev.add(a, b).noise_bound_bits
    assert nb == pytest.approx(np.log2(2**a.noise_bound_bits + 2**b.noise_bound_bits))
    with pytest.raises(LevelMismatch):
        ev.add(a, ev.level_down(b, 3))
    with pytest.raises(ScaleMismatch):
        ev.add(a, fresh(ev, np.zeros(N), scale=30))


def test_mult_pmult_rescale(ev, rng):
    v = rng.normal(size=N)
    a = fresh(ev, v)
    one = ev.rescale(ev.pmult(a, np.ones(N)))
    assert np.array_equal(one.message, v)
    sq = ev.rescale(ev.mult(a, a))
    assert np.array_equal(sq.message, v * v)
    assert sq.scale_bits == a.scale_bits and sq.level == a.level - 1
    with pytest.raises(LevelMismatch):
        ev.mult(a, sq)


def test_rescale_levels(ev):
    ct = fresh(ev, np.ones(N), level=3, scale=23)
    for _ in range(3):
        ct = ev.rescale(ev.mult(ct, ct))
    assert ct.level == 0
    with pytest.raises(ModulusExhausted):
        ev.rescale(ct)


def test_level_zero_discipline(ev):
    ct = fresh(ev, np.ones(N), level=0, scale=30)
    ev.add(ct, ct)
    ev.add_const(ct, 1.0)
    for op in (lambda: ev.mult(ct, ct), lambda: ev.pmult(ct, np.ones(N)),
               lambda: ev.rot(ct, 1), lambda: ev.mult_const(ct, 2.0),
               lambda: ev.slot_to_coeff(ct), lambda: ev.rescale(ct)):
        with pytest.raises(ModulusExhausted):
            op()
    out = ev.bts(ct, "CtSFirst")
    assert out.level == ev.config.profile("CtSFirst").output_level


def test_rot(ev, rng):
    v = rng.normal(size=N)
    a = fresh(ev, v)
    assert ev.rot(a, 0) is a
    r = ev.rot(a, 3)
    assert np.array_equal(r.message, np.roll(v, -3))
    assert r.message[0] == v[3]
    assert np.array_equal(ev.rot(r, N - 3).message, v)
    c = ev.ecd(v, Encoding.COEFF, 40)
    with pytest.raises(EncodingMismatch):
        ev.rot(c, 1)


def test_bts_profiles(ev, rng):
    v = rng.uniform(-1, 1, N)
    ct = fresh(ev, v, level=0, scale=30)
    out = ev.bts(ct, "CtSFirst")
    p = ev.config.profile("CtSFirst")
    assert out.level == p.output_level and out.scale_bits == p.output_scale_bits
    assert np.array_equal(out.message, v)
    with pytest.raises(ProfileMismatch):
        ev.bts(fresh(ev, v, level=2), "CtSFirst")
    with pytest.raises(ProfileMismatch):
        ev.bts(ct, "Half")
    c = ev.ecd(v, Encoding.COEFF, 5, level=0)
    h = ev.bts(c, "Half")
    assert h.encoding is Encoding.SLOT
    assert np.array_equal(h.message, np.round(v * 32) / 32)
    si = ev.bts(ev.ecd(v * 7, Encoding.COEFF, 10, level=0), "SIHalf")
    assert np.array_equal(si.message, np.round(v * 7))
    inj = Emulator(inject=True, seed=3)
    b = inj.bts(inj.ecd(v, Encoding.SLOT, 30, 0), "CtSFirst")
    assert np.max(np.abs(b.message - v)) <= b.error_bound


def test_classify_depth_fits_after_bts(ev):
    # after a bootstrap there is room for an 11-level chain above the 40-bit floor
    ct = ev.bts(fresh(ev, np.zeros(N), level=0), "CtSFirst")
    for _ in range(11):
        ct = ev.rescale(ev.mult(ct, ct))
    assert ct.scale_bits == 40 and ct.level >= 5


def test_ring_pack_switch(ev, rng):
    for k in (1, 2, 3):
        cts = [fresh(ev, rng.normal(size=N), level=4) for _ in range(2**k)]
        packed = ev.ring_pack(cts)
        assert packed.level == 3 and packed.log_ring_degree == 4 + k
        assert np.array_equal(packed.message, np.concatenate([c.message for c in cts]))
        back = ev.ring_switch_down(packed, 4)
        assert len(back) == 2**k and all(b.level == 2 for b in back)
        for b, c in zip(back, cts):
            assert np.array_equal(b.message, c.message)
    one = fresh(ev, np.arange(N), level=2)
    assert np.array_equal(ev.ring_pack([one]).message, one.message)
    with pytest.raises(EncodingMismatch):
        ev.ring_switch_down(ev.ecd(np.zeros(N), Encoding.COEFF, 40), 3)


def test_ci_conversions(ev, rng):
    v = rng.normal(size=N)
    a = fresh(ev, v)
    c = ev.from_ci(a)
    assert not c.ci and c.level == a.level - 1 and c.log_ring_degree == a.log_ring_degree + 1
    b = ev.to_ci(c)
    assert b.ci and b.level == a.level - 2
    assert np.array_equal(b.message, v)
    z = ev.ecd(v + 1j, Encoding.SLOT, 40)
    with pytest.raises(NonRealMessage):
        ev.to_ci(z)


def test_ccmm_twin(ev, rng):
    d, n_db, log_n = 16, 64, 4
    M = rng.integers(-1, 2, (n_db, d)).astype(float)
    lvl = 6
    qbits = ev.chain.modulus_bits(lvl)
    db = em.EncryptedDb(M, log_n, 2 * qbits - 40, ev.chain.bits(lvl))
    eye = [fresh(ev, row, level=lvl) for row in np.eye(d)]
    out = ev.ccmm_twin(db, eye)
    assert out.level == lvl - 1 and out.scale_bits == 40
    assert out.batch_shape == (d, n_db // N)
    assert out.count == d * n_db // 2**log_n
    assert np.array_equal(out.message.reshape(d, n_db), M.T)
    q = rng.integers(-1, 2, d).astype(float)
    s = ev.ccmm_twin(db, [fresh(ev, q, level=lvl)])
    assert np.array_equal(s.message.ravel(), M @ q)
    with pytest.raises(ModulusBudget):
        ev.ccmm_twin(em.EncryptedDb(M, log_n, qbits, 40), eye)
    with pytest.raises(ShapeMismatch):
        ev.ccmm_twin(em.EncryptedDb(M[:, :8], log_n, 1e4, 40), eye)


def test_batched_counts(ev):
    ct = ev.ecd(np.zeros((3, 4, N)), Encoding.SLOT, 40)
    assert ct.count == 12
    ev.reset_counters()
    with ev.phase("pre"):
        ev.bts(ev.level_down(ct, 0), "CtSFirst")
    assert ev.bts_count("pre") == 12 and ev.bts_count() == 12


def test_trace_csv(ev, tmp_path):
    ct = fresh(ev, np.ones(N))
    ev.rescale(ev.mult(ct, ct))
    path = tmp_path / "trace.csv"
    ev.write_trace(path)
    rows = path.read_text().splitlines()
    assert rows[0].startswith("op,count,level_before,level_after,scale_bits,noise_bound_bits")
    assert any(r.startswith("mult,") for r in rows)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        em.EmulatorConfig.from_dict({"noise": {}})
    with pytest.raises(ConfigError):
        em.ModulusChain(())
    cfg = em.load_config()
    path = tmp_path / "c.json"
    import json
    path.write_text(json.dumps(cfg.to_dict()))
    assert em.load_config(path).to_dict() == cfg.to_dict()


def _random_pipeline(seed):
    """Apply the same random op sequence to an injecting emulator and to numpy."""
    rng = np.random.default_rng(seed)
    ev = Emulator(inject=True, seed=seed)
    x = rng.uniform(-1, 1, N)
    y = rng.uniform(-1, 1, N)
    ca, cb = ev.ecd(x, Encoding.SLOT, 40), ev.ecd(y, Encoding.SLOT, 40)
    depth = int(rng.integers(1, 11))
    for _ in range(depth):
        op = rng.integers(0, 7)
        if op == 0:
            ca, cb = ev.match_levels(ca, cb)
            ca, x = ev.add(ca, cb), x + y
        elif op == 1:
            ca, cb = ev.match_levels(ca, cb)
            ca, x = ev.rescale(ev.mult(ca, cb)), x * y
        elif op == 2:
            p = rng.uniform(-1, 1, N)
            ca, x = ev.rescale(ev.pmult(ca, p)), x * p
        elif op == 3:
            r = int(rng.integers(0, N))
            ca, x = ev.rot(ca, r), np.roll(x, -r)
        elif op == 4:
            c = float(rng.uniform(-3, 3))
            ca, x = ev.mult_const(ca, c), x * c
        elif op == 5:
            c = float(rng.uniform(-1, 1))
            ca, x = ev.add_const(ca, c), x + c
        else:
            ca, x = ev.bts(ev.level_down(ca, 0), "CtSFirst"), x
        # keep magnitudes bounded
        if np.max(np.abs(x)) > 4:
            ca, x = ev.mult_const(ca, 0.25), x * 0.25
        assert np.all(np.abs(ca.message - x) <= ca.error_bound), (seed, op)
        ca, cb, x, y = cb, ca, y, x
    return True


def test_twin_fidelity_with_injection():
    for seed in range(1000):
        assert _random_pipeline(seed)


def test_twin_bit_identical_without_injection(rng):
    ev = Emulator(inject=False)
    v = rng.uniform(-1, 1, N)
    ct = fresh(ev, v)
    ct = ev.rescale(ev.mult(ct, ct))
    ct = ev.add_const(ev.mult_const(ct, 3.0), 0.5)
    ct = ev.rot(ct, 5)
    assert np.array_equal(ct.message, np.roll(v * v * 3.0 + 0.5, -5))


def test_half_bts_rounding_error_rule(ev):
    v = np.arange(N) / 32
    small = ev.ecd(v, Encoding.COEFF, 5, level=0)
    small = em.replace(small, noise_bound_bits=5 - 7)      # error 1/128 < half a unit of 1/32
    out = ev.bts(small, "Half")
    assert out.error_bound == pytest.approx(2.0 ** ev.config.profile("Half").e_bts_bits)
    big = em.replace(small, noise_bound_bits=5 - 3)        # error 1/8 > 1/64
    out = ev.bts(big, "Half")
    want = 1 / 8 + 1 / 64 + 2.0 ** ev.config.profile("Half").e_bts_bits
    assert out.error_bound == pytest.approx(want)


def test_extract_bits(ev):
    v = np.array([0, 1, 5, 15] * (N // 4), float)
    ct = ev.bts(ev.ecd(v, Encoding.COEFF, 10, level=0), "SIHalf")
    bits = ev.extract_bits(ct, 4)
    assert bits.message.shape == (4, N)
    assert bits.level == ct.level - ev.config.bitext_levels
    recon = sum(bits.message[i] * 2 ** i for i in range(4))
    assert np.array_equal(recon, v)
    assert bits.error_bound == pytest.approx(2.0 ** ev.config.bitext_error_bits)
    with pytest.raises(ShapeMismatch):
        ev.extract_bits(ct, 3)
    with pytest.raises(ScaleMismatch):
        ev.extract_bits(em.replace(ct, noise_bound_bits=ct.scale_bits), 4)
