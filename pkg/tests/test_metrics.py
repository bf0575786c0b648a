import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seattn.data import FG_COLORS, caption, render, sample_spec
from seattn.errors import ContractError
from seattn.metrics import (
    GaussianStats, bench_inference, count_params, frechet_distance, gaussian_stats, inception_score,
    param_breakdown, semantic_probe, shuffled_baseline, sqrtm_psd, write_report,
)
from seattn.nn import Conv2d, Linear, Module
from oracles import frechet_oracle, is_oracle, random_psd


# -- Gaussian statistics ------------------------------------------------------------------------------------
def test_stats_two_points():
    s = gaussian_stats([[0.0, 0.0], [2.0, 2.0]])
    np.testing.assert_array_equal(s.mean, [1.0, 1.0])
    np.testing.assert_array_equal(s.cov, [[2.0, 2.0], [2.0, 2.0]])


def test_stats_identical_rows():
    assert np.all(gaussian_stats(np.ones((5, 3))).cov == 0)


def test_stats_sampling_oracle():
    rng = np.random.default_rng(11)
    mean = np.array([1.0, -2.0])
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    s = gaussian_stats(rng.multivariate_normal(mean, cov, size=1000))
    se_mean = np.sqrt(np.diag(cov) / 1000)
    assert np.all(np.abs(s.mean - mean) < 3 * se_mean)
    se_var = np.diag(cov) * math.sqrt(2 / 999)
    assert np.all(np.abs(np.diag(s.cov) - np.diag(cov)) < 3 * se_var)


@pytest.mark.parametrize("shape", [(1, 3), (4,)])
def test_stats_rejects_bad_shape(shape):
    with pytest.raises(ContractError):
        gaussian_stats(np.zeros(shape))


# -- matrix square root -------------------------------------------------------------------------------------
@pytest.mark.parametrize("a,expect", [(np.eye(3), np.eye(3)), (np.diag([4.0, 9.0]), np.diag([2.0, 3.0]))])
def test_sqrtm_examples(a, expect):
    np.testing.assert_allclose(sqrtm_psd(a), expect, atol=1e-14)


def test_sqrtm_random_psd(rng):
    a = random_psd(rng, 5)
    r = sqrtm_psd(a)
    assert np.linalg.norm(r @ r - a) / np.linalg.norm(a) < 1e-8


def test_sqrtm_clamps_roundoff_negatives():
    v = np.array([[1.0, 1.0], [1.0, 1.0]]) - 1e-13 * np.eye(2)
    assert np.all(np.isfinite(sqrtm_psd(v)))


def test_sqrtm_asymmetric():
    with pytest.raises(ContractError):
        sqrtm_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


# -- Frechet distance ------------------------------------------------------------------------------------
def test_fd_self_is_zero(rng):
    s = GaussianStats(rng.standard_normal(4), random_psd(rng, 4))
    assert frechet_distance(s, s) == pytest.approx(0.0, abs=1e-10)


def test_fd_unit_shift_1d():
    a = GaussianStats(np.array([0.0]), np.array([[1.0]]))
    b = GaussianStats(np.array([1.0]), np.array([[1.0]]))
    assert abs(frechet_distance(a, b) - 1.0) <= 1e-9


def test_fd_vs_newton_schulz_oracle():
    rng = np.random.default_rng(21)
    for _ in range(20):
        m1, m2 = rng.standard_normal(3), rng.standard_normal(3)
        s1, s2 = random_psd(rng, 3), random_psd(rng, 3)
        got = frechet_distance(GaussianStats(m1, s1), GaussianStats(m2, s2))
        assert abs(got - frechet_oracle(m1, s1, m2, s2)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_fd_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a = GaussianStats(rng.standard_normal(3), random_psd(rng, 3))
    b = GaussianStats(rng.standard_normal(3), random_psd(rng, 3))
    ab, ba = frechet_distance(a, b), frechet_distance(b, a)
    assert ab >= 0 and abs(ab - ba) < 1e-8


def test_fd_dimension_mismatch():
    with pytest.raises(ContractError):
        frechet_distance(GaussianStats(np.zeros(2), np.eye(2)), GaussianStats(np.zeros(3), np.eye(3)))


# -- Inception-style score ----------------------------------------------------------------------------------
def test_is_uniform_rows():
    assert inception_score(np.full((7, 5), 0.2))[0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("k", [2, 10, 24])
def test_is_distinct_one_hots(k):
    assert inception_score(np.eye(k))[0] == pytest.approx(k, rel=1e-12)


def test_is_vs_loop_oracle():
    rng = np.random.default_rng(4)
    p = rng.dirichlet(np.ones(10), size=50)
    got = inception_score(p)[0]
    assert abs(got - is_oracle(p.tolist())) / got < 1e-10


def test_is_splits_report_std():
    p = np.concatenate([np.eye(4), np.full((4, 4), 0.25)])
    mean, std = inception_score(p, splits=2)
    assert mean == pytest.approx(2.5) and std == pytest.approx(1.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 12))
def test_is_range(seed, k):
    p = np.random.default_rng(seed).dirichlet(np.full(k, 0.3), size=20)
    assert 1.0 - 1e-9 <= inception_score(p)[0] <= k + 1e-9


def test_is_rejects_unnormalized():
    with pytest.raises(ContractError):
        inception_score(np.array([[0.5, 0.6]]))


# -- parameter counts ----------------------------------------------------------------------------------------
def test_count_params_examples(rng):
    assert count_params(Linear(256, 64, rng)) == 16448
    assert count_params(Conv2d(4, 8, 3, rng)) == 296


def test_param_breakdown(rng):
    class Pair(Module):
        def __init__(self):
            self.a = Linear(3, 2, rng)
            self.b = Conv2d(2, 2, 1, rng)

    bd = param_breakdown(Pair())
    assert bd == {"a": 8, "b": 6} and sum(bd.values()) == count_params(Pair())


# -- benchmarking -------------------------------------------------------------------------------------------
def test_bench_order_statistics_and_fingerprint():
    rep = bench_inference(lambda b: np.ones((b, 100)).sum(), n_warmup=1, n_runs=5, batch=4)
    assert rep.latency_p95 >= rep.latency_median >= 0
    assert rep.runs == 5 and rep.batch_size == 4 and rep.cpu
    assert "latency_median=" in rep.to_text() and '"threads": 1' in rep.to_json()


def test_bench_needs_three_runs():
    with pytest.raises(ContractError):
        bench_inference(lambda b: None, n_runs=2)


def test_bench_outputs_fixed_while_timing_varies(rng):
    outs = []
    lin = Linear(8, 4, rng)

    def run(b):
        from seattn.tensor import Tensor

        outs.append(lin(Tensor(np.random.default_rng(0).standard_normal((b, 8)).astype(np.float32))).data.tobytes())

    bench_inference(run, n_warmup=1, n_runs=4)
    assert len(set(outs)) == 1


def test_bench_batch_envelope(rng):
    lin = Linear(64, 64, rng)
    from seattn.tensor import Tensor

    x = {b: Tensor(np.ones((b, 64), np.float32)) for b in (8, 16)}
    work = lambda b: [lin(x[b]) for _ in range(20)]
    small = bench_inference(work, 2, 9, 8).latency_median
    big = bench_inference(work, 2, 9, 16).latency_median
    assert big <= 2 * small


# -- semantic probe -------------------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def renders():
    specs = [sample_spec(7, i) for i in range(100)]
    images = np.stack([render(lab, jit) for lab, jit, _ in specs])
    caps = [caption(lab, var) for lab, _, var in specs]
    return images, caps


def test_probe_ground_truth(renders):
    assert semantic_probe(*renders) == 1.0


def test_probe_channel_shuffled_near_chance(renders):
    images, caps = renders
    assert semantic_probe(images[:, [1, 2, 0]], caps) <= 1 / len(FG_COLORS) + 0.1


def test_probe_gray_below_half(renders):
    _, caps = renders
    assert semantic_probe(np.zeros((100, 3, 32, 32), np.float32), caps) < 0.5


def test_shuffled_baseline_below_truth(renders):
    assert shuffled_baseline(*renders, seed=0) < 0.5


@pytest.mark.parametrize("cap", ["a red circle", "a big red circle on a blue background", "hello"])
def test_probe_rejects_non_template(renders, cap):
    with pytest.raises(ContractError):
        semantic_probe(renders[0][:1], [cap])


def test_write_report_deterministic(tmp_path):
    vals = {"b": 0.1 + 0.2, "a": 3, "c": True}
    write_report(vals, tmp_path / "r1.txt", tmp_path / "r1.json")
    write_report(dict(reversed(list(vals.items()))), tmp_path / "r2.txt", tmp_path / "r2.json")
    assert (tmp_path / "r1.txt").read_bytes() == (tmp_path / "r2.txt").read_bytes()
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
    assert (tmp_path / "r1.txt").read_text().splitlines() == ["a=3", "b=0.30000000000000004", "c=True"]
