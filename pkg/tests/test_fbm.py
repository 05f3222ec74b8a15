import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import hyp2f1

from irregsde.core import DomainError, RngStream, TimeGrid, coarsen_increments, constant, from_x
from irregsde.fbm import (
    FbmConfig,
    _hyp_w,
    fbm_covariance,
    fbm_em_path,
    fbm_sample,
    kernel_constant,
    kernel_isometry,
    kernel_K_H,
    simulate_fbm_em,
    theoretical_rate_main7,
    theoretical_rate_main7_L1,
)


def test_covariance_examples():
    assert fbm_covariance(0.5, 0.3, 0.7) == pytest.approx(0.3)
    assert fbm_covariance(0.2, 1.0, 1.0) == pytest.approx(1.0)
    assert fbm_covariance(0.3, 2.0, 1.0) == pytest.approx(0.5 * 2**0.6, abs=1e-12)
    assert fbm_covariance(0.3, 2.0, 1.0) == pytest.approx(0.757858, abs=1e-6)
    with pytest.raises(DomainError):
        fbm_covariance(0.3, -1.0, 1.0)
    with pytest.raises(DomainError):
        fbm_covariance(1.0, 1.0, 1.0)


def test_half_is_brownian():
    grid = TimeGrid(2.0, 16)
    d, path = fbm_sample(0.5, grid, np.random.default_rng(0), 50_000)
    assert d.var(axis=0).mean() == pytest.approx(grid.dt, rel=0.02)
    assert np.allclose(path[:, 0], 0)


@pytest.mark.parametrize("method", ["cholesky", "circulant"])
def test_sample_covariance_matches(method):
    H = 0.3
    grid = TimeGrid(1.0, 8)
    M = 100_000
    _, path = fbm_sample(H, grid, np.random.default_rng(1), M, method)
    X = path[:, 1:]
    t = grid.nodes[1:]
    C = fbm_covariance(H, t[:, None], t[None, :])
    prods = X[:, :, None] * X[:, None, :]
    S = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / math.sqrt(M)
    assert np.all(np.abs(S - C) <= 5 * se)
    # self-similarity: Var B^H(1) = 1 (one 3 SE check; the 5 SE sweep above covers the diagonal)
    assert abs(X[:, -1].var(ddof=1) - 1.0) <= 3 * math.sqrt(2 / (M - 1))


def test_stationary_increments():
    H = 0.25
    grid = TimeGrid(1.0, 16)
    M = 20_000
    _, path = fbm_sample(H, grid, np.random.default_rng(2), M)
    for s, t in [(2, 6), (5, 13), (8, 16)]:
        a = path[:, t] - path[:, s]
        sd = ((t - s) * grid.dt) ** H
        assert stats.kstest(a, "norm", args=(0, sd)).statistic <= 2 / math.sqrt(M)
        assert stats.kstest(path[:, t - s], "norm", args=(0, sd)).statistic <= 2 / math.sqrt(M)


def test_samplers_agree():
    H = 0.35
    grid = TimeGrid(1.0, 32)
    M = 20_000
    _, a = fbm_sample(H, grid, np.random.default_rng(3), M, "cholesky")
    _, b = fbm_sample(H, grid, np.random.default_rng(4), M, "circulant")
    # two-sample KS: effective size M*M/(M+M)
    for k in [1, 16, 32]:
        assert stats.ks_2samp(a[:, k], b[:, k]).statistic <= 2 / math.sqrt(M / 2)


def test_coupling_by_summation():
    grid = TimeGrid(1.0, 64)
    d, path = fbm_sample(0.2, grid, np.random.default_rng(5), 10)
    coarse = coarsen_increments(d, 8)
    assert np.allclose(coarse, path[:, ::8][:, 1:] - path[:, ::8][:, :-1], atol=1e-12)
    assert np.array_equal(coarse, coarsen_increments(d, 8))


# --- hypergeometric and kernel ------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.floats(0.02, 0.98), st.floats(0.0, 0.999))
def test_hypergeometric_against_scipy(H, w):
    if abs(H - 0.5) < 1e-3:
        return
    ours = _hyp_w(H, np.array([w]))[0]
    ref = hyp2f1(H - 0.5, 2 * H, H + 0.5, w)
    assert ours == pytest.approx(ref, rel=1e-11)


@pytest.mark.parametrize("H, t, s", [(0.2, 1.0, 0.3), (0.35, 2.0, 1.9), (0.45, 1.0, 0.01), (0.1, 3.0, 1.0)])
def test_raw_kernel_against_mpmath(H, t, s):
    ref = (t - s) ** (H - 0.5) / mpmath.gamma(H + 0.5) * mpmath.hyp2f1(H - 0.5, 0.5 - H, H + 0.5, 1 - t / s)
    assert kernel_K_H(H, t, s, normalized=False) == pytest.approx(float(ref), rel=1e-11)


def test_kernel_examples():
    assert kernel_K_H(0.5, 1.0, 0.3) == 1
    H, t = 0.3, 1.0
    for gap in [1e-4, 1e-6]:
        k = kernel_K_H(H, t, t - gap, normalized=False)
        assert k == pytest.approx(gap ** (H - 0.5) / math.gamma(H + 0.5), rel=1e-3)
    with pytest.raises(DomainError):
        kernel_K_H(0.3, 1.0, 1.0)
    with pytest.raises(DomainError):
        kernel_K_H(0.3, 1.0, 0.0)


@pytest.mark.parametrize("H", [0.1, 0.2, 0.35, 0.45])
@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_kernel_isometry(H, t):
    assert kernel_isometry(H, t) == pytest.approx(t ** (2 * H), abs=1e-6)


def test_raw_kernel_isometry_constant():
    # without c_H the integral is t^{2H} / c_H^2
    H = 0.2
    assert kernel_isometry(H, 1.0, normalized=False) == pytest.approx(1 / kernel_constant(H) ** 2, rel=1e-8)
    assert kernel_constant(0.5) == pytest.approx(1.0)


# --- scheme and rates --------------------------------------------------------------------


def test_driftless_scheme_is_fbm():
    grid = TimeGrid(1.0, 32)
    d, path = fbm_sample(0.3, grid, np.random.default_rng(6), 4)
    X = fbm_em_path(FbmConfig(0.3, grid, constant(0.0), x0=1.0), d)
    assert np.allclose(X, 1.0 + path, atol=1e-14)


def test_step_drift_self_convergence_decreases():
    H = 0.3
    b = from_x(lambda x: np.where(x <= 0.0, 1.0, -1.0), sup_bound=1.0, discontinuous=True)
    fine = TimeGrid(1.0, 512)
    d, _ = fbm_sample(H, fine, np.random.default_rng(7), 4000)
    ref = fbm_em_path(FbmConfig(H, fine, b), d)[:, -1]
    errs = []
    for n in [8, 32, 128]:
        X = fbm_em_path(FbmConfig(H, TimeGrid(1.0, n), b), coarsen_increments(d, 512 // n))[:, -1]
        errs.append(np.mean(np.abs(X - ref)))
    assert errs[0] > errs[1] > errs[2]


def test_lipschitz_drift_rate():
    H = 0.3
    b = from_x(lambda x: -x, growth_exponent=0.0)
    ns = [16, 32, 64, 128]
    fine = TimeGrid(1.0, 4 * ns[-1])
    d, _ = fbm_sample(H, fine, np.random.default_rng(8), 4000)
    errs = []
    for n in ns:
        f = fbm_em_path(FbmConfig(H, TimeGrid(1.0, 4 * n), b), coarsen_increments(d, fine.n // (4 * n)))
        c = fbm_em_path(FbmConfig(H, TimeGrid(1.0, n), b), coarsen_increments(d, fine.n // n))
        errs.append(np.sqrt(np.mean(np.max(np.abs(f[:, ::4] - c), axis=1) ** 2)))
    slope = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert slope >= 0.8 * H


def test_simulate_threads_invariant():
    cfg = FbmConfig(0.3, TimeGrid(1.0, 16), constant(0.5))
    a = simulate_fbm_em(cfg, 3000, RngStream(1), threads=1, block_size=700)
    b = simulate_fbm_em(cfg, 3000, RngStream(1), threads=8, block_size=700)
    assert np.array_equal(a.values, b.values)


def test_scope_flag():
    assert FbmConfig(0.3, TimeGrid(1.0, 4), constant(0.0)).in_rate_regime
    assert not FbmConfig(0.7, TimeGrid(1.0, 4), constant(0.0)).in_rate_regime


def test_rate_examples():
    assert theoretical_rate_main7(0.25, 1, 2, 0.1) == pytest.approx(0.09)
    assert theoretical_rate_main7(0.25, 1, 2, 1.0) == 0
    assert theoretical_rate_main7(0.4, 0.5, 1, 0.1) == pytest.approx(0.9 * 0.5 * 0.4 / 1.4)
    assert theoretical_rate_main7_L1(0.4, 0.5, 0.1) == pytest.approx(0.128571, abs=1e-6)
    # p gamma < 1 switches branch
    assert theoretical_rate_main7(0.25, 0.4, 2, 0.0) == pytest.approx(0.4 * 0.25 / 1.25)
    assert theoretical_rate_main7(0.25, 0.5, 3, 0.0) == pytest.approx(0.25 / (3 * 1.25))
    with pytest.raises(DomainError):
        theoretical_rate_main7(0.5, 1, 2, 0.1)
    with pytest.raises(DomainError):
        theoretical_rate_main7(0.3, 1, 1.5, 0.1)
