import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from irregsde.core import DomainError, RngStream, RunFailure, constant, from_x
from irregsde.harness import (
    ErrorCurve,
    ErrorPoint,
    RateFit,
    SchemeFamily,
    SheFamily,
    brownian_bridge_max,
    brownian_noise,
    config_hash,
    em_family,
    fit_rate,
    max_bound_exponent,
    max_functional_error,
    mlmc_estimate,
    ou_family,
    stable_family,
    strong_error,
    time_avg_bv_error,
    weak_error,
)

NS = [2**k for k in range(4, 10)]


def elliptic():
    b = from_x(lambda x: -x, growth_exponent=0.0, name="-x")
    s = from_x(lambda x: 1 + 0.5 * np.sin(x), sup_bound=1.5, ellipticity_floor=0.2, name="1+sin/2")
    return em_family(b, s, 0.0)


def above(K):
    return lambda x: (x > K).astype(float)


# --- strong errors ------------------------------------------------------------------------


def test_scheme_against_itself_is_zero():
    fam = elliptic()
    paired = SchemeFamily(fam.T, fam.noise, fam.scheme, fam.scheme, reference_factor=None)
    c = strong_error(paired, [4, 16, 64], 500, seed=1)
    assert np.all(c.errors == 0) and np.all(c.stderrs == 0)
    same = SchemeFamily(fam.T, fam.noise, fam.scheme, reference_factor=1)
    assert strong_error(same, [32], 300, mode="terminal").errors[0] == 0


def test_ou_strong_order_one():
    c = strong_error(ou_family(), NS, 4000, p=2, seed=2)
    r = fit_rate(c)
    assert r.exponent == pytest.approx(1.0, abs=0.15)
    assert c.is_monotone()


def test_geometric_strong_order_half():
    fam = em_family(constant(0.0), from_x(lambda x: x, growth_exponent=0.0, name="x"), 1.0)
    c = strong_error(fam, NS, 4000, p=2, seed=3)
    assert fit_rate(c).exponent == pytest.approx(0.5, abs=0.15)
    assert c.is_monotone()


def test_ou_exact_reference_is_exact():
    # the exact recursion reproduces the OU transition law at every node
    fam = ou_family(theta=2.0, sigma=0.5, x0=1.0, T=1.0)
    rng = np.random.default_rng(0)
    out, ref, N = fam.run([8], 100_000, rng)
    x = ref[:, -1]
    m, v = math.exp(-2.0), 0.25 * (1 - math.exp(-4.0)) / 4.0
    assert abs(x.mean() - m) <= 3 * math.sqrt(v / x.size)
    assert abs(x.var() - v) <= 3 * v * math.sqrt(2 / x.size)


def test_terminal_mode_le_sup():
    fam = elliptic()
    a = strong_error(fam, [8, 16, 32], 2000, mode="sup", seed=4)
    b = strong_error(fam, [8, 16, 32], 2000, mode="terminal", seed=4)
    assert np.all(b.errors <= a.errors)


def test_strong_error_thread_invariant():
    fam = elliptic()
    a = strong_error(fam, [4, 8, 16], 5000, seed=5, threads=1, block_size=700)
    b = strong_error(fam, [4, 8, 16], 5000, seed=5, threads=8, block_size=700)
    assert a.to_json() == b.to_json()


def test_divergence_policy():
    cubic = from_x(lambda x: -(x**3), growth_exponent=3.0, name="-x^3")
    fam = em_family(cubic, constant(1.0), 10.0, allow_superlinear=True)
    with pytest.raises(RunFailure):
        strong_error(fam, [8, 16], 200, seed=0)
    # a tamed family on the same problem stays healthy
    tamed = em_family(cubic, constant(1.0), 10.0, taming="drift-only", ell=2.0)
    c = strong_error(tamed, [8, 16], 200, seed=0)
    assert all(pt.diverged == 0 for pt in c.points)


def test_single_divergence_is_counted():
    base = elliptic()

    def scheme(g, dW):
        X = base.scheme(g, dW)
        X[0, -1] = np.nan
        return X

    fam = SchemeFamily(1.0, brownian_noise, scheme, base.scheme, reference_factor=4)
    c = strong_error(fam, [4, 8], 1000, seed=1)
    assert [pt.diverged for pt in c.points] == [1, 1]
    assert [pt.M for pt in c.points] == [999, 999]


def test_stable_moment_refused():
    fam = stable_family(1.5, constant(1.0, name="1"))
    with pytest.raises(DomainError, match="infinite"):
        strong_error(fam, [4, 8], 10, p=1.5)
    c = strong_error(fam, [4, 8, 16], 2000, p=0.5, seed=1)
    assert np.all(c.errors <= 1e-12)  # constant sigma: EM is exact at the nodes up to summation order


def test_argument_checks():
    fam = elliptic()
    for ns in ([8, 4], [], [0, 2]):
        with pytest.raises(DomainError):
            strong_error(fam, ns, 10)
    with pytest.raises(DomainError):
        strong_error(fam, [4, 8], 10, mode="mean")
    with pytest.raises(DomainError):
        SchemeFamily(1.0, brownian_noise, fam.scheme, reference_factor=1).fine_n([3, 4])


# --- weak errors --------------------------------------------------------------------------


def test_weak_constant_payoff():
    c = weak_error(elliptic(), lambda x: np.ones_like(x), [4, 8, 16], 1000, seed=1)
    assert np.all(c.errors == 0)
    c = weak_error(elliptic(), lambda x: np.full_like(x, 2.0), [4, 8, 16], 1000, reference=2.0, seed=1)
    assert np.all(c.errors == 0)


def test_weak_she_deterministic():
    T = 0.25  # m = 4Tn^2 = n^2 exactly
    fam = SheFamily(T, 0.5, u0=lambda x: np.sin(np.pi * x))
    c = weak_error(fam, lambda v: v, [4, 8, 16, 32], 3, reference=math.exp(-math.pi**2 * T), functional=lambda X: X[:, 0])
    assert np.all(np.diff(c.errors) < 0)
    assert fit_rate(c).exponent == pytest.approx(2, abs=0.1)


def test_weak_binary_payoff_rate():
    fam = elliptic()
    fam.reference_factor = 8
    c = weak_error(fam, above(0.5), [4, 8, 16, 32], 40_000, seed=5)
    assert fit_rate(c).exponent >= 0.3


def test_weak_exact_gaussian_reference():
    fam = em_family(constant(0.0), constant(1.0), 0.0)
    c = weak_error(fam, lambda x: x**2, [4, 8], 20_000, reference=1.0, seed=9)
    assert np.all(c.errors <= 3 * c.stderrs)


# --- time-averaged BV ---------------------------------------------------------------------


def exact_sign_change(n):
    """int_0^1 P(sign B(s) != sign B(eta(s))) ds with the open indicator at 0."""
    h = 1 / n
    tot = 0.5 * h
    for k in range(1, n):
        tk = k * h
        tot += integrate.quad(lambda s: np.arccos(np.sqrt(tk / s)) / np.pi, tk, tk + h)[0]
    return tot


def test_time_avg_constant_is_zero():
    fam = em_family(constant(0.0), constant(1.0), 0.0)
    c = time_avg_bv_error(fam, lambda x: np.full_like(x, 3.0), [4, 8, 16], 500)
    assert np.all(c.errors == 0)


def test_time_avg_indicator_on_bm():
    fam = em_family(constant(0.0), constant(1.0), 0.0)
    ns = [16, 32, 64, 128, 256, 512, 1024]
    c = time_avg_bv_error(fam, above(0.0), ns, 20_000, q=1, seed=2)
    exact = np.array([exact_sign_change(n) for n in ns])
    assert np.all(np.abs(c.errors - exact) <= 3.5 * c.stderrs)
    slope = fit_rate(c).exponent
    assert 0.35 <= slope <= 0.55
    assert fit_rate(ns, "power", exact).exponent == pytest.approx(0.51, abs=0.01)


def test_time_avg_requires_em_family():
    with pytest.raises(DomainError):
        time_avg_bv_error(ou_family(), above(0.0), [4, 8], 10)


# --- max functional -------------------------------------------------------------------------


def test_bridge_max_law():
    # running max of BM on [0, 1] has the law of |N(0, 1)|
    from irregsde.core import TimeGrid

    g = TimeGrid(1.0, 8)
    rng = np.random.default_rng(1)
    B = np.concatenate([np.zeros((100_000, 1)), np.cumsum(rng.normal(0, math.sqrt(g.dt), (100_000, 8)), 1)], 1)
    top = brownian_bridge_max(B, g, rng)
    assert stats.kstest(top, lambda x: 2 * stats.norm.cdf(x) - 1).statistic <= 2 / math.sqrt(top.size)


def test_max_functional_constant():
    fam = em_family(constant(0.0), constant(1.0), 0.0)
    c, _ = max_functional_error(fam, lambda x: np.zeros_like(x), [4, 8, 16], 300, p=2)
    assert np.all(c.errors == 0)


def test_max_functional_binary():
    fam = em_family(constant(0.0), constant(1.0), 0.0, reference_factor=16)
    ns = [4, 8, 16, 32, 64]
    c, bound = max_functional_error(fam, above(0.5), ns, 20_000, p=10, q=1, alpha=1, seed=4, reference_max=brownian_bridge_max)
    assert bound.exponent == pytest.approx(max_bound_exponent(10, 1))
    assert bound.consistent(c.errors, c.stderrs)
    assert c.is_monotone(2.0)
    # the reference max is exact, so the error is the probability that the grid misses the crossing
    assert c.errors[0] == pytest.approx(0.18, abs=0.02)


# --- MLMC -----------------------------------------------------------------------------------


def test_mlmc_single_level_is_plain_mc():
    fam = elliptic()
    r = mlmc_estimate(fam, above(0.2), 16, 1, 3000, seed=7, fine_check=False)
    from irregsde.core import TimeGrid, run_blocks

    s = RngStream(7).substream("mlmc-level-0")
    g = TimeGrid(1.0, 16)
    vals = np.concatenate(run_blocks(lambda b, bs, m: (fam.scheme(g, fam.noise(g, m, bs.generator()))[:, -1] > 0.2) * 1.0, 3000, s))
    assert r.estimate == np.mean(vals)


def test_mlmc_lipschitz_variance_decay():
    fam = elliptic()
    r = mlmc_estimate(fam, lambda x: x, 8, 4, 8000, seed=8)
    ell = np.arange(1, 4)
    slope = -np.polyfit(ell, np.log2(r.variances[1:]), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.25)
    assert r.telescoping_ok()


def test_mlmc_binary_variance_decay():
    fam = elliptic()
    r = mlmc_estimate(fam, above(0.5), 8, 4, 10_000, seed=3)
    v = r.variances
    assert np.all(np.diff(v) < 0)
    slope = -np.polyfit(np.arange(1, 4), np.log2(v[1:]), 1)[0]
    assert 0.3 <= slope <= 0.6
    assert r.telescoping_ok()
    assert r.stderr == pytest.approx(math.sqrt(sum(lv.variance / lv.M for lv in r.levels)))


def test_mlmc_report_io(tmp_path):
    r = mlmc_estimate(elliptic(), above(0.0), 4, 2, [400, 200], seed=1)
    d = json.loads(r.to_json(tmp_path / "r.json"))
    assert d["levels"][1]["M"] == 200 and d["config_hash"] == config_hash(r.config)
    assert r.to_csv().count("\n") == 3
    with pytest.raises(DomainError):
        mlmc_estimate(elliptic(), above(0.0), 4, 2, [400])


# --- rate fitting ---------------------------------------------------------------------------


def test_fit_power_exact():
    ns = np.array([4, 8, 16, 64, 256])
    f = fit_rate(ns, "power", 5 * ns**-0.5)
    assert f.C == pytest.approx(5, abs=1e-9) and f.exponent == pytest.approx(0.5, abs=1e-9)
    assert f.r2 == pytest.approx(1.0)


def test_fit_constant_curve():
    f = fit_rate([2, 4, 8, 16], "power", [3.0] * 4)
    assert f.exponent == pytest.approx(0, abs=1e-12) and f.r2 == 1.0


def test_fit_log_exact_and_auto():
    ns = np.array([4, 16, 64, 256, 1024, 4096])
    e = 2 / np.log(ns)
    f = fit_rate(ns, "auto", e)
    assert f.model == "log"
    assert f.exponent == pytest.approx(1, abs=1e-9) and f.C == pytest.approx(2, abs=1e-9)
    assert f.alternative.model == "power" and f.alternative.r2 < f.r2
    assert fit_rate(ns, "auto", ns**-1.0).model == "power"


@given(st.floats(0.01, 100), st.floats(-2, 2))
def test_fit_power_recovers_parameters(C, r):
    ns = np.array([3, 7, 20, 50, 400])
    f = fit_rate(ns, "power", C * ns ** (-r))
    assert f.C == pytest.approx(C, rel=1e-9) and f.exponent == pytest.approx(r, abs=1e-9)


def test_fit_domain():
    with pytest.raises(DomainError):
        fit_rate([1, 2, 3], "power", [1, 0, 1])
    with pytest.raises(DomainError):
        fit_rate([1, 2], "power", [1, 1])
    with pytest.raises(DomainError):
        fit_rate([1, 2, 3], "log", [1, 1, 1])
    with pytest.raises(DomainError):
        fit_rate([2, 3, 4], "cubic", [1, 1, 1])


# --- result types ---------------------------------------------------------------------------


def test_error_curve_invariants():
    pt = lambda n, e=0.1, s=0.01: ErrorPoint(n, e, s, 10, 2.0, "weak")
    with pytest.raises(DomainError):
        ErrorCurve([pt(8), pt(4)])
    with pytest.raises(DomainError):
        ErrorCurve([pt(4, -1.0)])
    with pytest.raises(DomainError):
        ErrorCurve([ErrorPoint(4, 0.1, 0.0, 1, 1.0, "bogus")])
    c = ErrorCurve([pt(4, 0.1), pt(8, 0.11), pt(16, 0.2)])
    assert not c.is_monotone() and ErrorCurve([pt(4, 0.1), pt(8, 0.11)]).is_monotone()


def test_error_curve_io(tmp_path):
    c = strong_error(elliptic(), [4, 8, 16], 300, seed=11)
    back = ErrorCurve.from_json(c.to_json(tmp_path / "c.json"))
    assert back.points == c.points and back.seed == 11 and back.config_hash == c.config_hash
    rows = c.to_csv(tmp_path / "c.csv").strip().split("\n")
    assert len(rows) == 4 and rows[0].startswith("n,error,stderr,M,p")
    assert json.loads(c.to_json())["config"]["M"] == 300


def test_config_hash_git_style():
    import hashlib

    h = config_hash({"b": 1, "a": [1, 2]})
    data = b'{"a":[1,2],"b":1}'
    assert h == hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
    assert h == config_hash({"a": [1, 2], "b": 1})


def test_ratefit_predict():
    f = RateFit("log", 2.0, 1.0, 0.0, 1.0)
    assert f.predict(math.e**2) == pytest.approx(1.0)
    assert RateFit("power", 4.0, 0.5, 0, 1).predict(16) == pytest.approx(1.0)
