import pytest
from hypothesis import given
from hypothesis import strategies as st

from irisfhe.costmodel import (GB, KB, CommParams, CostConfig, clusters_needed, comm_report,
                               cost_report, db_size_bits, db_size_bytes_int8, expansion_factor,
                               format_report, gpu_distribution_plan, query_ciphertexts,
                               query_size_bytes)
from irisfhe.errors import ConfigError
from irisfhe.modmat import build_paper_basis


def test_database_sizes():
    assert db_size_bytes_int8(1, 48) == 36 * GB
    assert db_size_bytes_int8(0, 48) == 18 * GB
    assert db_size_bits(1, 360) == 3 * 2 * 2 ** 27 * 360
    # the next slice of 7 * 2^14 entries
    assert db_size_bytes_int8(7, 48) == 144 * GB


@given(st.integers(0, 64))
def test_planes_never_undercount(ell):
    basis = build_paper_basis()
    assert db_size_bytes_int8(ell, basis.digit_planes) * 8 >= db_size_bits(ell, basis.log2_Q)


def test_query_sizes():
    assert query_size_bytes(16, 16, 2) == 512 * KB
    assert query_size_bytes(16, 8, 2) == 256 * KB
    assert query_ciphertexts(2 ** 14, 31, 4, 16) == 2
    assert comm_report()["query_ciphertexts_total"] == 62


def test_expansion_factor():
    assert expansion_factor(16, 4) == 20 / 64
    assert expansion_factor(16, 1) == pytest.approx(1 + 1 / 16)
    vals = [expansion_factor(16, b) for b in range(1, 10)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ConfigError):
        expansion_factor(0, 4)


def test_comm_report():
    r = comm_report()
    assert r["decryptor_ciphertext_bytes"] == 256 * KB
    assert r["share_bytes"] == 128 * KB
    assert r["receiver_bytes"] < KB
    assert comm_report(CommParams(query_q_bits=8))["query_bytes"] == 256 * KB


def test_gpu_plan():
    p = gpu_distribution_plan(7 * 2 ** 14, 2 ** 14, 8)
    assert (p.a_gpus, p.b_gpus, p.entries_per_b_gpu) == (1, 7, 2 ** 14)
    assert p.a_bytes == 18 * GB and p.b_bytes_per_gpu == 18 * GB
    assert p.total_bytes == db_size_bytes_int8(7, 48)
    with pytest.raises(ConfigError):
        gpu_distribution_plan(7 * 2 ** 14 + 1)
    with pytest.raises(ConfigError):
        gpu_distribution_plan(slices=1)


def test_scaling_clusters():
    assert clusters_needed(2 ** 22) == 37
    assert clusters_needed(7 * 2 ** 14) == 1


def test_cost_report_defaults():
    r = cost_report()
    assert r["planes"] == 48
    assert r["db_bytes_int8"] == 36 * GB
    assert r["a_part_gb"] == 18
    assert r["clusters_for_target"] == 37
    text = format_report(r)
    assert "36 GB" in text and "512 KB" in text and "128 KB" in text


def test_cost_config_validation():
    with pytest.raises(ConfigError):
        CostConfig.from_dict({"ell": 1, "bogus": 2})
    with pytest.raises(ConfigError):
        CostConfig.from_dict({"comm": {"bogus": 1}})
    cfg = CostConfig.from_dict({"ell": 0, "comm": {"decryptors": 3}})
    assert cost_report(cfg)["db_gb"] == 18
