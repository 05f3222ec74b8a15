import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from irregsde.avikainen import (
    AvikainenReport,
    avikainen_check,
    avikainen_rhs,
    bv_diff_moment,
    discrete_local_time,
    holder_estimate,
    indicator_diff_moment,
    key2_rhs,
    local_time_bound,
    skorokhod_inverse,
    time_avg_cdf,
    uniform_shift_flip_probability,
)
from irregsde.core import BVFunction, DomainError, EmpiricalCDF, PathEnsemble, TimeGrid


def uniform_cdf(x):
    return np.clip(x, 0.0, 1.0)


# --- Skorokhod inverse ----------------------------------------------------------


def test_skorokhod_examples():
    assert skorokhod_inverse(uniform_cdf, 0.3, bracket=(0, 1)) == pytest.approx(0.3, abs=1e-12)
    F = EmpiricalCDF([1.0, 2.0, 3.0])
    assert skorokhod_inverse(F, 0.5) == 2.0
    assert skorokhod_inverse(F, 1.0) == 3.0
    assert skorokhod_inverse(F, 1 / 3) == 1.0
    for s in [0.0, -0.1, 1.1]:
        with pytest.raises(DomainError):
            skorokhod_inverse(F, s)


def test_skorokhod_analytic_step_cdf_takes_infimum():
    # point mass at 2: F jumps from 0 to 1 at x = 2
    F = lambda x: float(x >= 2.0)
    assert skorokhod_inverse(F, 0.7) == pytest.approx(2.0, abs=1e-10)


@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=40),
    st.floats(1e-6, 1.0),
    st.floats(-60, 60),
)
def test_galois_property(samples, s, x):
    F = EmpiricalCDF(samples)
    assert (s <= F(x)) == (skorokhod_inverse(F, s) <= x)


def test_skorokhod_law_equality():
    rng = np.random.default_rng(3)
    samples = rng.gamma(2.0, size=5000)
    F = EmpiricalCDF(samples)
    s = 1.0 - rng.random(10_000)  # uniform on (0, 1]
    draws = skorokhod_inverse(F, s)
    ks = stats.ks_2samp(draws, samples).statistic
    assert ks <= 2 / math.sqrt(F.size)


# --- right-hand sides -------------------------------------------------------------


def test_avikainen_rhs_examples():
    assert avikainen_rhs(1, 1, 1, 1, 1, 1, 0.01) == pytest.approx(0.9)
    assert avikainen_rhs(2.5, 0.5, 3, 4, 2, 3, 0.0) == 0
    assert avikainen_rhs(1, 1, 1, 0, 1, 1, 0.01) == 0


def test_key2_rhs_examples():
    assert key2_rhs(1, 1, 1, 0.01) == pytest.approx(0.3)
    assert key2_rhs(1, 1, 1, 0.0) == 0
    assert key2_rhs(4, 1, 1, 0.01) == pytest.approx(0.6)


@pytest.mark.parametrize("bad", [dict(alpha=0), dict(alpha=1.5), dict(p=0), dict(q=0.5)])
def test_rhs_domain(bad):
    args = dict(holder_const=1, alpha=1, mu_S=1, vg=1, p=1, q=1, lp_error=0.1)
    args.update(bad)
    with pytest.raises(DomainError):
        avikainen_rhs(**args)


@given(
    st.floats(0, 10), st.floats(0.05, 1), st.floats(0, 10), st.floats(0, 10),
    st.floats(0.1, 5), st.floats(1, 4), st.floats(0, 10),
    st.sampled_from(["holder_const", "mu_S", "vg", "lp_error"]), st.floats(0, 5),
)
def test_rhs_monotone(hc, a, mu, vg, p, q, lp, which, bump):
    base = dict(holder_const=hc, alpha=a, mu_S=mu, vg=vg, p=p, q=q, lp_error=lp)
    up = dict(base)
    up[which] += bump
    assert avikainen_rhs(**up) >= avikainen_rhs(**base) * (1 - 1e-12)


# --- left-hand sides ---------------------------------------------------------------


def test_indicator_diff_moment_examples():
    x = np.array([0.1, 0.5, 0.9])
    assert indicator_diff_moment(x, x + 0.2, 0.6, 1) == pytest.approx(1 / 3)
    assert indicator_diff_moment(x, x, 0.3, 2) == 0
    assert indicator_diff_moment(x, x + 0.2, 0.6, 7) == indicator_diff_moment(x, x + 0.2, 0.6, 1)
    with pytest.raises(DomainError):
        indicator_diff_moment([], [], 0.0)


def test_bv_diff_moment_examples():
    assert bv_diff_moment(BVFunction(3.0), [1, 2], [5, -7]) == 0
    assert bv_diff_moment(BVFunction.indicator_above(0.0), [-1, 1], [1, 1], 1) == 0.5
    assert bv_diff_moment(BVFunction.sign(), [-1], [1], 2) == 4
    with pytest.raises(DomainError):
        bv_diff_moment(BVFunction.sign(), [], [])


def test_uniform_shift_flip_probability_brute_force():
    # stratified enumeration of X on a fine midpoint grid
    xs = (np.arange(200_000) + 0.5) / 200_000
    for delta in [1e-3, 1e-2, 0.1]:
        for K in [0.05, 0.5, 0.999]:
            brute = np.mean((xs <= K) != (xs + delta <= K))
            assert uniform_shift_flip_probability(delta, K) == pytest.approx(brute, abs=2e-5)


# --- Hölder estimates -----------------------------------------------------------


def test_holder_uniform_lipschitz():
    est = holder_estimate(uniform_cdf, 1.0, 2**-10, 2**-2, domain=(-0.5, 1.5))
    assert est.constant == pytest.approx(1.0, abs=1e-12)


def test_holder_sqrt_half():
    F = lambda x: np.sqrt(np.clip(x, 0, None))
    est = holder_estimate(F, 0.5, 2**-10, 2**-2, domain=(0.0, 1.0))
    assert est.constant == pytest.approx(1.0, rel=0.05)


def test_holder_point_mass_grows():
    F = EmpiricalCDF(np.zeros(50))
    c1 = holder_estimate(F, 1.0, 2**-7, 1.0).constant
    c2 = holder_estimate(F, 1.0, 2**-14, 1.0).constant
    # a jump of size one makes the ratio blow up like 1 / h_min
    assert c1 == 2**7 and c2 == 2**14


def test_holder_empirical_matches_brute_offsets():
    rng = np.random.default_rng(1)
    F = EmpiricalCDF(rng.normal(size=300))
    est = holder_estimate(F, 0.7, 0.05, 0.8)
    # brute force over a dense offset grid never exceeds the sliding-window supremum
    xs = np.linspace(-5, 5, 20001)
    for h, c in zip(est.scales, est.per_scale):
        brute = np.max(F(xs + h) - F(xs)) / h**0.7
        assert brute <= c + 1e-12
        assert brute >= c * 0.9
    with pytest.raises(DomainError):
        holder_estimate(F, 1.0, 0.0, 1.0)


# --- time-averaged CDF and local time ---------------------------------------------


def test_time_avg_cdf_constant_paths():
    grid = TimeGrid(1.0, 10)
    ens = PathEnsemble(grid, np.full((4, 11), 2.5))
    F = time_avg_cdf(ens)
    assert F(2.5) == 1 and F(2.4999) == 0


def test_time_avg_cdf_identity_path():
    grid = TimeGrid(1.0, 1000)
    F = time_avg_cdf(PathEnsemble(grid, grid.nodes[None, :]))
    xs = np.linspace(0, 1, 101)
    assert np.max(np.abs(F(xs) - xs)) <= 2e-3


def test_time_avg_cdf_brownian_is_lipschitz_above_resolution():
    rng = np.random.default_rng(2)
    grid = TimeGrid(1.0, 256)
    dB = rng.normal(scale=math.sqrt(grid.dt), size=(2000, 256))
    vals = np.concatenate([np.zeros((2000, 1)), np.cumsum(dB, axis=1)], axis=1)
    F = time_avg_cdf(PathEnsemble(grid, vals))
    est = holder_estimate(F, 1.0, 2**-6, 2**-1)
    # density of the occupation measure of BM on [0, 1] peaks at 2 / sqrt(2 pi) ~ 0.8
    assert 0.6 < est.constant < 1.1


def test_local_time_examples():
    grid = TimeGrid(1.0, 100_000)
    path = grid.nodes
    dqv = np.full(grid.n, grid.dt)
    assert discrete_local_time(path, 5.0, 0.1, dqv) == 0
    assert discrete_local_time(path, 0.5, 0.1, dqv) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(DomainError):
        discrete_local_time(path, 0.5, 0.0, dqv)


def test_local_time_second_moment_bound_for_bm():
    rng = np.random.default_rng(7)
    grid = TimeGrid(1.0, 2000)
    dB = rng.normal(scale=math.sqrt(grid.dt), size=(4000, grid.n))
    B = np.concatenate([np.zeros((4000, 1)), np.cumsum(dB, axis=1)], axis=1)
    L = discrete_local_time(B, 0.0, 0.02, np.full(grid.n, grid.dt))
    sq = L**2
    se = sq.std(ddof=1) / math.sqrt(sq.size)
    assert sq.mean() <= local_time_bound(0.0, 1.0, 1.0) + 5 * se
    # L_1^0 has the law of |B_1|, so E[L^2] = 1
    assert sq.mean() == pytest.approx(1.0, abs=0.1)


# --- full check ----------------------------------------------------------------


def test_check_constant_g():
    x = np.random.default_rng(0).random(100)
    rep = avikainen_check(BVFunction(2.0), x, x + 1, 1, 1, 1, 1.0)
    assert rep.lhs == 0 and rep.satisfied


def test_check_uniform_shift_exact():
    M = 100_000
    x = (np.arange(M) + 0.5) / M
    g = BVFunction.indicator_below(0.5)
    rep = avikainen_check(g, x, x + 0.01, 1, 1, 1, 1.0, exact=True)
    assert rep.lhs == pytest.approx(0.01, abs=1e-9)
    assert rep.rhs == pytest.approx(0.9, rel=1e-9)
    assert rep.satisfied and rep.tolerance == 0


def test_check_identical_samples():
    x = np.random.default_rng(1).random(1000)
    rep = avikainen_check(BVFunction.sign(), x, x, 2, 1, 1, 1.0)
    assert rep.lhs == 0 and rep.rhs == 0 and rep.satisfied


def test_report_json_round_trip():
    rng = np.random.default_rng(4)
    x = rng.random(500)
    F = EmpiricalCDF(x)
    rep = avikainen_check(BVFunction.sign(), x, x + 0.01 * rng.standard_normal(500), 1, 1, 1, (F, 0.05, 0.5))
    back = AvikainenReport.from_json(rep.to_json())
    assert back == rep
    d = json.loads(rep.to_json())
    for key in ["lhs", "rhs", "p", "q", "alpha", "holder_const", "mu_S", "vg", "satisfied"]:
        assert key in d


@pytest.mark.parametrize("delta", [1e-4, 1e-3, 1e-2, 1e-1])
@pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("q", [1, 2])
@pytest.mark.parametrize("kind", ["le", "lt", "ge", "gt"])
def test_exact_uniform_case_never_exceeds_key2(delta, p, q, kind):
    for K in np.linspace(-0.2, 1.2, 57):
        lhs = uniform_shift_flip_probability(delta, K, kind) ** 1  # 0/1 values: q-independent
        assert lhs <= key2_rhs(1.0, 1.0, p, delta**p)
