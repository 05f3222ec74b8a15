"""Both sides of the generalized Avikainen estimate, and the tools to feed them.

For a finite measure ``mu`` on ``S``, a measurable ``f`` whose distribution
function ``F_f(x) = mu(f <= x)`` is ``alpha``-Hölder, any ``fhat`` and any
``g`` of bounded variation,

    int |g(f) - g(fhat)|^q dmu
        <= 3^(q+1) V(g)^q ||F_f||_alpha^(p/(p+alpha)) mu(S)^(p/(p+alpha))
           (int |f - fhat|^p dmu)^(alpha/(p+alpha)).

The indicator version has constant 3 and no ``V(g)`` or ``mu(S)`` factor.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .core.bv import BVFunction, bv_eval, bv_total_variation
from .core.ecdf import EmpiricalCDF
from .core.errors import DomainError
from .core.paths import PathEnsemble


@dataclass(frozen=True)
class HolderEstimate:
    exponent: float
    constant: float
    h_min: float
    h_max: float
    scales: tuple = ()
    per_scale: tuple = ()

    @property
    def scale_range(self):
        return (self.h_min, self.h_max)


@dataclass
class AvikainenReport:
    lhs: float
    rhs: float
    p: float
    q: float
    alpha: float
    holder_const: float
    mu_S: float
    vg: float
    lp_error: float
    lhs_se: float = 0.0
    rhs_se: float = 0.0
    tolerance: float = 0.0
    satisfied: bool = False
    holder_scale_range: Optional[tuple] = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holder_scale_range"] = list(self.holder_scale_range) if self.holder_scale_range else None
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "AvikainenReport":
        d = json.loads(text)
        if d.get("holder_scale_range") is not None:
            d["holder_scale_range"] = tuple(d["holder_scale_range"])
        return cls(**d)


# ----------------------------------------------------------------------
# Skorokhod representation


def skorokhod_inverse(F, s, bracket=(-1.0, 1.0), xtol=1e-13):
    """``X*(s) = inf{x : F(x) >= s}`` for an empirical or analytic CDF.

    For an :class:`EmpiricalCDF` this is the ``ceil(s M)``-th order
    statistic. For a callable nondecreasing ``F`` the infimum is located by
    bisection after expanding ``bracket`` until it straddles ``s``.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0) or np.any(s_arr > 1):
        raise DomainError("level must lie in (0, 1]")
    if isinstance(F, EmpiricalCDF):
        return F.quantile(s)
    if np.ndim(s) != 0:
        return np.array([skorokhod_inverse(F, si, bracket, xtol) for si in s_arr.ravel()]).reshape(s_arr.shape)
    s = float(s)
    lo, hi = map(float, bracket)
    width = hi - lo
    for _ in range(200):
        if F(lo) < s:
            break
        lo -= width
        width *= 2
    width = hi - lo
    for _ in range(200):
        if F(hi) >= s:
            break
        hi += width
        width *= 2
    else:
        raise DomainError(f"CDF never reaches level {s}")
    # invariant: F(lo) < s <= F(hi)
    while hi - lo > xtol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if F(mid) >= s:
            hi = mid
        else:
            lo = mid
    return hi


# ----------------------------------------------------------------------
# right-hand sides


def avikainen_rhs(holder_const, alpha, mu_S, vg, p, q, lp_error):
    """Bound ``3^(q+1) V(g)^q ||F||^(p/(p+a)) mu(S)^(p/(p+a)) (int |f-fhat|^p)^(a/(p+a))``."""
    _check_exponents(alpha, p, q)
    for name, v in (("holder_const", holder_const), ("mu_S", mu_S), ("vg", vg), ("lp_error", lp_error)):
        if v < 0:
            raise DomainError(f"{name} must be nonnegative")
    e1 = p / (p + alpha)
    return (
        3.0 ** (q + 1)
        * vg**q
        * holder_const**e1
        * mu_S**e1
        * lp_error ** (alpha / (p + alpha))
    )


def key2_rhs(holder_const, alpha, p, lp_moment):
    """Indicator bound ``3 ||F_X||_alpha^(p/(p+alpha)) E|X - Xhat|^p^(alpha/(p+alpha))``."""
    _check_exponents(alpha, p, 1.0)
    if holder_const < 0 or lp_moment < 0:
        raise DomainError("magnitudes must be nonnegative")
    return 3.0 * holder_const ** (p / (p + alpha)) * lp_moment ** (alpha / (p + alpha))


def _check_exponents(alpha, p, q):
    if not 0 < alpha <= 1:
        raise DomainError(f"Hölder exponent must lie in (0, 1], got {alpha}")
    if not p > 0:
        raise DomainError(f"p must be positive, got {p}")
    if not q >= 1:
        raise DomainError(f"q must be at least 1, got {q}")


# ----------------------------------------------------------------------
# left-hand sides


def _paired(x, xhat):
    x = np.asarray(x, dtype=float).ravel()
    xhat = np.asarray(xhat, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("empty sample")
    if x.shape != xhat.shape:
        raise DomainError("samples must be paired")
    return x, xhat


def indicator_diff_moment(x, xhat, K, q=1.0):
    """Mean of ``|1{x <= K} - 1{xhat <= K}|^q``; independent of ``q``."""
    x, xhat = _paired(x, xhat)
    if q < 1:
        raise DomainError("q must be at least 1")
    return float(np.mean((x <= K) != (xhat <= K)))


def bv_diff_moment(g: BVFunction, x, xhat, q=1.0):
    x, xhat = _paired(x, xhat)
    if q < 1:
        raise DomainError("q must be at least 1")
    return float(np.mean(np.abs(bv_eval(g, x) - bv_eval(g, xhat)) ** q))


def uniform_shift_flip_probability(delta, K, kind="le"):
    """Exact ``E|1_A(X) - 1_A(X + delta)|`` for ``X ~ U[0, 1]`` and ``delta >= 0``.

    ``kind`` names the half-line ``A``: ``"le"`` ``(-inf, K]``, ``"lt"``
    ``(-inf, K)``, ``"ge"`` ``[K, inf)``, ``"gt"`` ``(K, inf)``. For every
    kind the indicator flips exactly when ``K`` separates ``X`` from
    ``X + delta`` (up to a null set), i.e. on ``[K - delta, K] ∩ [0, 1]``.
    """
    if delta < 0:
        raise DomainError("shift must be nonnegative")
    if kind not in ("le", "lt", "ge", "gt"):
        raise DomainError(f"unknown half-line kind {kind!r}")
    return max(0.0, min(K, 1.0) - max(K - delta, 0.0))


# ----------------------------------------------------------------------
# Hölder constants


def default_h_min(F: EmpiricalCDF) -> float:
    return max(3.0 / F.size, 2.0 * F.min_gap())


def holder_estimate(
    F: Union[EmpiricalCDF, Callable],
    alpha: float,
    h_min: Optional[float] = None,
    h_max: Optional[float] = None,
    grid_size: int = 4097,
    domain: Optional[tuple] = None,
) -> HolderEstimate:
    """Largest ``|F(x+h) - F(x)| / h^alpha`` over a dyadic ladder of scales.

    Scales run ``h_max, h_max/2, ...`` down to ``h_min``. For an analytic
    ``F`` the offsets ``x`` form a uniform grid of ``grid_size`` points on
    ``domain``. For an :class:`EmpiricalCDF` the supremum over all offsets
    is computed exactly with a sliding window over the order statistics,
    which dominates any finite offset grid.
    """
    if not 0 < alpha <= 1:
        raise DomainError(f"exponent must lie in (0, 1], got {alpha}")
    if grid_size < 2:
        raise DomainError("grid_size must be at least 2")
    empirical = isinstance(F, EmpiricalCDF)
    if h_min is None:
        if not empirical:
            raise DomainError("h_min is required for an analytic CDF")
        h_min = default_h_min(F)
    if h_max is None:
        if empirical:
            h_max = max(float(F.samples[-1] - F.samples[0]), h_min)
        else:
            raise DomainError("h_max is required for an analytic CDF")
    if not h_min > 0:
        raise DomainError(f"h_min must be positive, got {h_min}")
    if h_max < h_min:
        raise DomainError("h_max must not be below h_min")

    scales = []
    h = float(h_max)
    while h >= h_min * (1 - 1e-12):
        scales.append(h)
        h /= 2.0
    if not scales:
        scales = [float(h_min)]

    per_scale = []
    if empirical:
        s = F.samples
        idx = np.arange(s.size)
        for h in scales:
            counts = np.searchsorted(s, s + h, side="left") - idx
            per_scale.append(counts.max() / s.size / h**alpha)
    else:
        if domain is None:
            raise DomainError("an analytic CDF needs a domain for its offset grid")
        lo, hi = domain
        for h in scales:
            xs = np.linspace(lo, max(lo, hi - h), grid_size)
            vals = np.abs(np.asarray(F(xs + h), dtype=float) - np.asarray(F(xs), dtype=float))
            per_scale.append(float(vals.max()) / h**alpha)
    return HolderEstimate(
        exponent=float(alpha),
        constant=float(max(per_scale)),
        h_min=float(h_min),
        h_max=float(h_max),
        scales=tuple(scales),
        per_scale=tuple(float(v) for v in per_scale),
    )


def time_avg_cdf(paths) -> EmpiricalCDF:
    """Pooled ECDF of all ``(path, left node)`` values.

    Approximates ``x -> (1/T) int_0^T P(Y(s) <= x) ds`` by a left Riemann sum
    over the grid; diverged rows are dropped.
    """
    if isinstance(paths, PathEnsemble):
        vals = paths.healthy()[:, :-1]
    else:
        vals = np.atleast_2d(np.asarray(paths, dtype=float))[:, :-1]
        vals = vals[np.all(np.isfinite(vals), axis=1)]
    if vals.size == 0:
        raise DomainError("empty ensemble")
    return EmpiricalCDF(vals.ravel())


def discrete_local_time(path, x, h, dqv):
    """Band estimator ``(1/2h) sum_k 1{|Y(t_k) - x| <= h} d<Y>_k`` of the symmetric local time.

    ``path`` holds node values along the last axis (``n`` left nodes or
    ``n + 1`` nodes, in which case the terminal value is ignored); ``dqv``
    holds the ``n`` quadratic-variation increments, broadcastable against
    the left nodes.
    """
    if not h > 0:
        raise DomainError(f"bandwidth must be positive, got {h}")
    y = np.asarray(path, dtype=float)
    dqv = np.asarray(dqv, dtype=float)
    n = dqv.shape[-1]
    if y.shape[-1] == n + 1:
        y = y[..., :-1]
    elif y.shape[-1] != n:
        raise DomainError("path and quadratic-variation increments do not align")
    return np.sum((np.abs(y - x) <= h) * dqv, axis=-1) / (2.0 * h)


def local_time_bound(b_sup, sigma_sup, T):
    """``12 ||b||^2 T^2 + 6 ||sigma||^2 T``, the uniform bound on ``E[(L_T^x)^2]``."""
    return 12.0 * b_sup**2 * T**2 + 6.0 * sigma_sup**2 * T


# ----------------------------------------------------------------------
# the full check


def avikainen_check(
    g: BVFunction,
    x,
    xhat,
    p: float,
    q: float,
    alpha: float,
    holder_source,
    mu_S: float = 1.0,
    n_se: float = 3.0,
    exact: bool = False,
) -> AvikainenReport:
    """Compare the empirical left side with the bound.

    ``x``/``xhat`` are paired draws from the normalized measure
    ``mu / mu(S)``; integrals are reported as ``mu_S * mean``. The Hölder
    source is either a number (the constant of the *unnormalized*
    ``F_f``), a :class:`HolderEstimate`, or a tuple
    ``(EmpiricalCDF, h_min, h_max)`` for the normalized law, in which case
    the constant is rescaled by ``mu_S``.

    With ``exact=False`` the verdict allows ``n_se`` pooled standard errors.
    """
    x, xhat = _paired(x, xhat)
    _check_exponents(alpha, p, q)
    notes = {}
    scale_range = None
    if isinstance(holder_source, (int, float)):
        holder = float(holder_source)
    elif isinstance(holder_source, HolderEstimate):
        holder = holder_source.constant * mu_S
        scale_range = holder_source.scale_range
    else:
        F, h_min, h_max = holder_source
        est = holder_estimate(F, alpha, h_min, h_max)
        holder = est.constant * mu_S
        scale_range = est.scale_range
        notes["holder_per_scale"] = list(est.per_scale)

    vg = bv_total_variation(g)
    d = np.abs(bv_eval(g, x) - bv_eval(g, xhat)) ** q
    e = np.abs(x - xhat) ** p
    M = x.size
    lhs = mu_S * float(d.mean())
    lp = mu_S * float(e.mean())
    rhs = avikainen_rhs(holder, alpha, mu_S, vg, p, q, lp)
    if exact or M < 2:
        lhs_se = rhs_se = tol = 0.0
    else:
        lhs_se = mu_S * float(d.std(ddof=1)) / math.sqrt(M)
        lp_se = mu_S * float(e.std(ddof=1)) / math.sqrt(M)
        # delta method through lp -> lp^(alpha/(p+alpha))
        rhs_se = rhs * (alpha / (p + alpha)) * lp_se / lp if lp > 0 else 0.0
        tol = n_se * math.hypot(lhs_se, rhs_se)
    return AvikainenReport(
        lhs=lhs,
        rhs=rhs,
        p=p,
        q=q,
        alpha=alpha,
        holder_const=holder,
        mu_S=mu_S,
        vg=vg,
        lp_error=lp,
        lhs_se=lhs_se,
        rhs_se=rhs_se,
        tolerance=tol,
        satisfied=bool(lhs <= rhs + tol),
        holder_scale_range=scale_range,
        notes=notes,
    )
