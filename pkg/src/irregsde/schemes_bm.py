"""Brownian-driven schemes: Euler-Maruyama, tamed Euler-Maruyama, drift removal
by a scale function, the skew-measure transform and the coupled pair scheme.

Every path function takes the driving increments explicitly so that
coupled fine/coarse runs reuse the same noise. A 1-D increment vector gives
one path and raises :class:`DivergedPathError` on overflow; an ``(M, n)``
array gives ``M`` paths and marks overflowing rows with NaN instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .core.coefficients import Coefficient1D
from .core.errors import DivergedPathError, DomainError
from .core.grid import TimeGrid, is_refinement, step_index
from .core.parallel import DEFAULT_BLOCK, run_blocks
from .core.paths import PathEnsemble, coarsen_increments, first_nonfinite
from .core.rng import RngStream

TAMING_MODES = ("none", "drift-only", "drift-and-diffusion")


@dataclass(frozen=True)
class EMConfig:
    """Scalar SDE ``dX = b(t, X) dt + sigma(t, X) dB`` with a scheme choice.

    ``allow_superlinear`` lets the untamed scheme run on coefficients that
    grow faster than linearly. It exists so the classical blow-up can be
    demonstrated; it is off by default.
    """

    drift: Coefficient1D
    diffusion: Coefficient1D
    x0: float
    grid: TimeGrid
    taming: str = "none"
    ell: float = 0.0
    allow_superlinear: bool = False

    def __post_init__(self):
        if self.taming not in TAMING_MODES:
            raise DomainError(f"unknown taming mode {self.taming!r}; expected one of {TAMING_MODES}")
        if not self.ell >= 0:
            raise DomainError(f"taming exponent must be non-negative, got {self.ell}")
        if not math.isfinite(self.x0):
            raise DomainError("initial value must be finite")

    def validate(self) -> bool:
        self.diffusion.validate(diffusion=True)
        self.drift.validate()
        if self.taming == "none" and not self.allow_superlinear:
            for c, role in ((self.drift, "drift"), (self.diffusion, "diffusion")):
                if not _declared_linear(c):
                    raise DomainError(
                        f"untamed scheme needs a {role} with declared linear growth "
                        "(sup_bound or growth_exponent 0); use taming or allow_superlinear"
                    )
        if self.taming == "drift-and-diffusion":
            if self.ell <= 0:
                raise DomainError("taming the diffusion needs a positive growth exponent")
            p0 = self.drift.meta.get("p0", self.diffusion.meta.get("p0"))
            if p0 is not None and self.ell > (p0 - 2) / 4 + 1e-12:
                raise DomainError(f"growth exponent {self.ell} exceeds (p0 - 2)/4 = {(p0 - 2) / 4}")
        return True


def _declared_linear(c: Coefficient1D) -> bool:
    return c.sup_bound is not None or (c.growth_exponent is not None and c.growth_exponent <= 0)


# --- Euler-Maruyama ----------------------------------------------------------------


def _as_paths(increments, n):
    dB = np.asarray(increments, dtype=float)
    single = dB.ndim == 1
    if single:
        dB = dB[None, :]
    if dB.ndim != 2 or dB.shape[1] != n:
        raise DomainError(f"expected {n} increments per path, got shape {np.shape(increments)}")
    return dB, single


def _euler_loop(b, sigma, x0, grid, dB, single):
    """Shared Euler loop; ``b`` and ``sigma`` are ``(t, x) -> array``."""
    M, n = dB.shape
    h = grid.dt
    X = np.empty((M, n + 1))
    X[:, 0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            t = k * h
            x = X[:, k]
            nxt = x + b(t, x) * h + sigma(t, x) * dB[:, k]
            bad = ~np.isfinite(nxt)
            if bad.any():
                if single:
                    raise DivergedPathError(k + 1)
                # NaN then propagates through every later step of the row
                nxt[bad] = np.nan
            X[:, k + 1] = nxt
    return X[0] if single else X


def em_path(cfg: EMConfig, increments) -> np.ndarray:
    """Euler-Maruyama values at the grid nodes.

    ``X_{k+1} = X_k + b(t_k, X_k) T/n + sigma(t_k, X_k) dB_k``.
    """
    if cfg.taming != "none":
        return tamed_em_path(cfg, increments)
    dB, single = _as_paths(increments, cfg.grid.n)
    return _euler_loop(cfg.drift.fn, cfg.diffusion.fn, cfg.x0, cfg.grid, dB, single)


def brownian_increments(grid: TimeGrid, M: int, stream: RngStream) -> np.ndarray:
    return math.sqrt(grid.dt) * stream.generator().standard_normal((M, grid.n))


def simulate_em(
    cfg: EMConfig,
    M: int,
    stream: RngStream,
    threads: Optional[int] = None,
    keep_increments: bool = False,
    block_size: int = DEFAULT_BLOCK,
) -> PathEnsemble:
    """``M`` scheme paths; per-block noise comes from ``stream.split(block)``."""
    cfg.validate()

    def block(b, s, m):
        dB = brownian_increments(cfg.grid, m, s)
        return em_path(cfg, dB), (dB if keep_increments else None)

    parts = run_blocks(block, M, stream, threads, block_size)
    values = np.concatenate([p[0] for p in parts])
    incs = np.concatenate([p[1] for p in parts]) if keep_increments else None
    return PathEnsemble(cfg.grid, values, incs)


def em_at(cfg: EMConfig, values, increments, s, rng: np.random.Generator):
    """Continuous-time scheme value at per-path times ``s``.

    Between nodes the scheme moves with frozen coefficients, so its value at
    ``s`` needs ``B(s) - B(eta(s))``; that is drawn from the Brownian bridge
    pinned by the stored increment. Returns ``(X(s), X(eta(s)))``.
    """
    values = np.atleast_2d(values)
    dB = np.atleast_2d(increments)
    s = np.broadcast_to(np.asarray(s, dtype=float), (values.shape[0],))
    k = step_index(cfg.grid, s)
    rows = np.arange(values.shape[0])
    tk = k * cfg.grid.dt
    frac = s - tk
    h = cfg.grid.dt
    mean = frac / h * dB[rows, k]
    var = np.clip(frac * (h - frac) / h, 0.0, None)
    bridge = mean + np.sqrt(var) * rng.standard_normal(rows.size)
    if cfg.taming != "none":
        b, sig = tamed_coefficients(cfg.drift, cfg.diffusion, cfg.grid.n, cfg.ell, cfg.taming)
    else:
        b, sig = cfg.drift, cfg.diffusion
    xk = values[rows, k]
    xs = xk + b.fn(tk, xk) * frac + sig.fn(tk, xk) * bridge
    return xs, xk


# --- taming ----------------------------------------------------------------------


def tamed_coefficients(b: Coefficient1D, sigma: Coefficient1D, n: int, ell: float, mode: str = "drift-only"):
    """Scale the coefficients down where ``|x|`` is large relative to ``n``.

    ``b_n = b / (1 + n^{-1/2} |x|^ell)`` and, when the diffusion is tamed too,
    ``sigma_n = sigma / (1 + n^{-1/4} |x|^{ell/2})``.
    """
    if n < 1:
        raise DomainError("step count must be positive")
    if ell < 0:
        raise DomainError("taming exponent must be non-negative")
    if mode not in TAMING_MODES:
        raise DomainError(f"unknown taming mode {mode!r}")
    if mode == "none" or (mode == "drift-only" and ell == 0):
        return b, sigma
    cb = n**-0.5
    bf = b.fn

    def b_n(t, x):
        return bf(t, x) / (1.0 + cb * np.abs(x) ** ell)

    tb = Coefficient1D(b_n, growth_exponent=0.0, name=f"tamed({b.name})", meta=dict(b.meta))
    if mode == "drift-only":
        return tb, sigma
    cs = n**-0.25
    sf = sigma.fn

    def s_n(t, x):
        return sf(t, x) / (1.0 + cs * np.abs(x) ** (ell / 2))

    ts = Coefficient1D(s_n, growth_exponent=0.0, name=f"tamed({sigma.name})", meta=dict(sigma.meta))
    return tb, ts


def tamed_em_path(cfg: EMConfig, increments) -> np.ndarray:
    b, sig = tamed_coefficients(cfg.drift, cfg.diffusion, cfg.grid.n, cfg.ell, cfg.taming)
    dB, single = _as_paths(increments, cfg.grid.n)
    return _euler_loop(b.fn, sig.fn, cfg.x0, cfg.grid, dB, single)


# --- rate formulas -----------------------------------------------------------------


def theoretical_rate_main4(p: float, p0: float, p1: float, ell: float, gamma: float) -> float:
    """Predicted ``L^p`` rate of the tamed scheme, capped at 1/4."""
    if not 0 < gamma <= 1:
        raise DomainError("gamma must lie in (0, 1]")
    if ell < 0:
        raise DomainError("ell must be non-negative")
    upper = p0 / (2 * ell + 1)
    if not (2 <= p <= upper and p < p1):
        raise DomainError(f"p={p} outside [2, {upper}] and [2, {p1})")
    r = gamma * (ell + 1) / (2 * p0 + ell + 2) * p0 / (p * (2 * ell + 1))
    return min(r, 0.25)


def theoretical_rate_main42(alpha: float, gamma: float, rho: float, p: float) -> float:
    """Predicted rate for Hölder diffusions with one-sided Lipschitz drift.

    ``alpha = 1/2`` returns 0, which callers read as the logarithmic regime.
    """
    if not 0.5 <= alpha <= 1:
        raise DomainError("alpha must lie in [1/2, 1]")
    if not (0 < gamma <= 1 and 0 < rho <= 1):
        raise DomainError("gamma and rho must lie in (0, 1]")
    if p < 1:
        raise DomainError("p must be at least 1")
    return min(gamma * (1 - rho) / 2, p * (2 * alpha - 1) / 2)


# --- scale function ----------------------------------------------------------------


class ScaleFunction:
    """``phi(x) = int_0^x exp(-2 int_0^y b/sigma^2 dz) dy`` by adaptive quadrature.

    ``phi`` turns a time-homogeneous diffusion into a driftless one.
    Coefficients are evaluated at ``t = 0``.
    """

    def __init__(self, b: Coefficient1D, sigma: Coefficient1D, tol: float = 1e-12, limit: int = 200):
        self.b = b
        self.sigma = sigma
        self.tol = tol
        self.limit = limit
        if not sigma.ellipticity_floor or sigma.ellipticity_floor <= 0:
            raise DomainError("the scale function needs sigma with a declared positive ellipticity floor")
        self.floor = sigma.ellipticity_floor
        self._points = tuple(sorted(set(b.breakpoints) | set(sigma.breakpoints)))

    def _ratio(self, z):
        s2 = float(self.sigma.fn(0.0, z)) ** 2
        if s2 <= 0 or s2 < self.floor * (1 - 1e-12):
            raise DomainError(f"sigma^2 = {s2} at {z} is below the ellipticity floor")
        return 2.0 * float(self.b.fn(0.0, z)) / s2

    def _pts(self, a, c):
        lo, hi = min(a, c), max(a, c)
        pts = [p for p in self._points if lo < p < hi]
        return pts or None

    def exponent(self, y: float) -> float:
        if y == 0:
            return 0.0
        val, _ = integrate.quad(self._ratio, 0.0, y, points=self._pts(0.0, y), epsabs=self.tol, limit=self.limit)
        return val

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.vectorize(lambda y: math.exp(-self.exponent(y)), otypes=[float])(x)
        return float(out) if out.ndim == 0 else out

    def second_derivative(self, x):
        x = np.asarray(x, dtype=float)
        f = np.vectorize(lambda y: -self._ratio(y) * math.exp(-self.exponent(y)), otypes=[float])
        out = f(x)
        return float(out) if out.ndim == 0 else out

    def _phi1(self, x: float) -> float:
        if x == 0:
            return 0.0
        val, _ = integrate.quad(
            lambda y: math.exp(-self.exponent(y)), 0.0, x, points=self._pts(0.0, x), epsabs=self.tol, limit=self.limit
        )
        return val

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.vectorize(self._phi1, otypes=[float])(x)
        return float(out) if out.ndim == 0 else out

    def inverse(self, y, xtol: float = 1e-12):
        """``phi^{-1}`` by bracketed root finding on the increasing map."""

        def one(v):
            if v == 0:
                return 0.0
            a, c = (0.0, 1.0) if v > 0 else (-1.0, 0.0)
            while (self._phi1(c) < v) if v > 0 else (self._phi1(a) > v):
                if v > 0:
                    a, c = c, 2 * c
                else:
                    a, c = 2 * a, a
                if abs(a) > 1e12 or abs(c) > 1e12:
                    raise DomainError(f"{v} lies outside the range of the scale function")
            return optimize.brentq(lambda x: self._phi1(x) - v, a, c, xtol=xtol, rtol=4 * np.finfo(float).eps)

        y = np.asarray(y, dtype=float)
        out = np.vectorize(one, otypes=[float])(y)
        return float(out) if out.ndim == 0 else out

    def tabulate(self, lo: float, hi: float, size: int = 4001):
        """``(x, phi(x), phi'(x))`` on a uniform grid, accumulated cell by cell."""
        if not lo < 0 < hi:
            raise DomainError("tabulation range must straddle 0")
        xs = np.linspace(lo, hi, size)
        i0 = int(np.argmin(np.abs(xs)))
        xs[i0] = 0.0
        expo = np.zeros(size)
        for i in range(i0 + 1, size):
            expo[i] = expo[i - 1] + integrate.quad(self._ratio, xs[i - 1], xs[i], points=self._pts(xs[i - 1], xs[i]), epsabs=self.tol)[0]
        for i in range(i0 - 1, -1, -1):
            expo[i] = expo[i + 1] - integrate.quad(self._ratio, xs[i], xs[i + 1], points=self._pts(xs[i], xs[i + 1]), epsabs=self.tol)[0]
        dphi = np.exp(-expo)
        # trapezoid on exp(-expo) is second order away from breakpoints
        cells = 0.5 * (dphi[1:] + dphi[:-1]) * np.diff(xs)
        phi = np.zeros(size)
        phi[i0 + 1 :] = np.cumsum(cells[i0:])
        phi[:i0] = -np.cumsum(cells[:i0][::-1])[::-1]
        return xs, phi, dphi


def scale_function(b: Coefficient1D, sigma: Coefficient1D, x, tol: float = 1e-12):
    return ScaleFunction(b, sigma, tol)(x)


def scale_transform_em_path(cfg: EMConfig, increments, table=None, table_range=(-10.0, 10.0), table_size=4001):
    """Drift-removed variant: Euler on ``Y = phi(X)`` then map back.

    ``dY = (phi' sigma)(phi^{-1}(Y)) dB``. ``phi`` is tabulated once and
    inverted by monotone interpolation. Only time-homogeneous coefficients
    are meaningful here.
    """
    if table is None:
        table = ScaleFunction(cfg.drift, cfg.diffusion).tabulate(*table_range, size=table_size)
    xs, phi, dphi = table
    sf = cfg.diffusion.fn

    def inv(y):
        return np.interp(y, phi, xs)

    def a(t, y):
        x = inv(y)
        return np.interp(x, xs, dphi) * sf(t, x)

    dB, single = _as_paths(increments, cfg.grid.n)
    y0 = float(np.interp(cfg.x0, xs, phi))
    Y = _euler_loop(lambda t, y: 0.0, a, y0, cfg.grid, dB, single)
    return inv(Y)


# --- skew measure transform ----------------------------------------------------------


@dataclass(frozen=True)
class SignedAtomMeasure:
    """Finite signed measure ``sum_i w_i delta_{a_i}`` with every ``|w_i| < 1``."""

    atoms: tuple = ()

    def __post_init__(self):
        atoms = tuple(sorted((float(a), float(w)) for a, w in self.atoms))
        locs = [a for a, _ in atoms]
        if len(set(locs)) != len(locs):
            raise DomainError("atom locations must be distinct")
        for a, w in atoms:
            if not math.isfinite(a):
                raise DomainError("atom locations must be finite")
            if not abs(w) < 1:
                raise DomainError(f"atom weight {w} at {a} has |w| >= 1; no strong solution exists")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def skew(cls, alpha: float, at: float = 0.0) -> "SignedAtomMeasure":
        """Single atom ``(2 alpha - 1) delta_at`` of skew Brownian motion."""
        return cls(((at, 2 * alpha - 1),))

    @property
    def locations(self) -> np.ndarray:
        return np.array([a for a, _ in self.atoms])

    @property
    def factors(self) -> np.ndarray:
        return np.array([(1 - w) / (1 + w) for _, w in self.atoms])

    @property
    def total_variation(self) -> float:
        return float(sum(abs(w) for _, w in self.atoms))

    @property
    def K(self) -> float:
        return float(np.prod(self.factors)) if self.atoms else 1.0

    def bounds(self):
        """Range of ``f_nu``; ``(K, 1)`` when every weight is non-negative."""
        c = np.concatenate([[1.0], np.cumprod(self.factors)])
        return float(c.min()), float(c.max())


def f_nu(nu: SignedAtomMeasure, x):
    """``prod_{a_i <= x} (1 - w_i)/(1 + w_i)``, right-continuous in ``x``."""
    c = np.concatenate([[1.0], np.cumprod(nu.factors)])
    idx = np.searchsorted(nu.locations, np.asarray(x, dtype=float), side="right")
    out = c[idx]
    return float(out) if np.ndim(out) == 0 else out


def _F_knots(nu: SignedAtomMeasure):
    knots = np.union1d(nu.locations, [0.0])
    slopes = np.asarray(f_nu(nu, knots), dtype=float).reshape(-1)
    vals = np.zeros(knots.size)
    j0 = int(np.searchsorted(knots, 0.0))
    for j in range(j0 + 1, knots.size):
        vals[j] = vals[j - 1] + slopes[j - 1] * (knots[j] - knots[j - 1])
    for j in range(j0 - 1, -1, -1):
        vals[j] = vals[j + 1] - slopes[j] * (knots[j + 1] - knots[j])
    return knots, vals, slopes


def F_nu(nu: SignedAtomMeasure, x):
    """``int_0^x f_nu``, exact for atomic measures (piecewise linear)."""
    knots, vals, slopes = _F_knots(nu)
    x = np.asarray(x, dtype=float)
    j = np.searchsorted(knots, x, side="right") - 1
    left = j < 0
    jj = np.where(left, 0, j)
    out = np.where(left, vals[0] + (x - knots[0]), vals[jj] + slopes[jj] * (x - knots[jj]))
    return float(out) if out.ndim == 0 else out


def F_nu_inverse(nu: SignedAtomMeasure, y):
    knots, vals, slopes = _F_knots(nu)
    y = np.asarray(y, dtype=float)
    j = np.searchsorted(vals, y, side="right") - 1
    left = j < 0
    jj = np.where(left, 0, j)
    out = np.where(left, knots[0] + (y - vals[0]), knots[jj] + (y - vals[jj]) / slopes[jj])
    return float(out) if out.ndim == 0 else out


def singular_sde_scheme(
    sigma: Coefficient1D,
    nu: SignedAtomMeasure,
    grid: TimeGrid,
    increments,
    x0: float = 0.0,
    return_transformed: bool = False,
):
    """Approximate ``dX = sigma(X) dB + int L^a(X) nu(da)``.

    Runs driftless Euler on ``Y = F_nu(X)`` with coefficient
    ``(f_nu sigma)(F_nu^{-1}(y))`` and maps back through ``F_nu^{-1}``.
    """
    floor = sigma.ellipticity_floor
    if floor is None or floor <= 0:
        raise DomainError("the local-time equation needs a uniformly positive sigma (declare ellipticity_floor)")
    sf = sigma.fn

    def a(t, y):
        x = F_nu_inverse(nu, y)
        return f_nu(nu, x) * sf(t, x)

    dB, single = _as_paths(increments, grid.n)
    Y = _euler_loop(lambda t, y: 0.0, a, F_nu(nu, x0), grid, dB, single)
    X = F_nu_inverse(nu, Y)
    return (X, Y) if return_transformed else X


# --- functionals and coupling ----------------------------------------------------------


def discrete_max(values) -> np.ndarray:
    """Running maximum over the grid nodes (last axis)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0 or v.shape[-1] == 0:
        raise DomainError("empty path")
    out = v.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def coupled_system_em(
    cfg_x: EMConfig,
    mu: Callable,
    rho1: Callable,
    rho2: Callable,
    y0: float,
    dB,
    dW,
):
    """Euler scheme for ``dX = b dt + sigma dB``,
    ``dY = mu(t,X,Y) dt + rho1(t,X,Y) dB + rho2(t,X,Y) dW``.
    """
    n = cfg_x.grid.n
    dB, single = _as_paths(dB, n)
    dW, _ = _as_paths(dW, n)
    if dW.shape != dB.shape:
        raise DomainError("the two noise arrays must have the same shape")
    if cfg_x.taming != "none":
        b, s = tamed_coefficients(cfg_x.drift, cfg_x.diffusion, n, cfg_x.ell, cfg_x.taming)
    else:
        b, s = cfg_x.drift, cfg_x.diffusion
    h = cfg_x.grid.dt
    M = dB.shape[0]
    X = np.empty((M, n + 1))
    Y = np.empty((M, n + 1))
    X[:, 0] = cfg_x.x0
    Y[:, 0] = y0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            t = k * h
            x, y = X[:, k], Y[:, k]
            X[:, k + 1] = x + b.fn(t, x) * h + s.fn(t, x) * dB[:, k]
            Y[:, k + 1] = y + mu(t, x, y) * h + rho1(t, x, y) * dB[:, k] + rho2(t, x, y) * dW[:, k]
    bad = np.maximum(first_nonfinite(X), first_nonfinite(Y))
    if single:
        if bad[0] >= 0:
            raise DivergedPathError(int(bad[0]))
        return X[0], Y[0]
    for i in np.flatnonzero(bad >= 0):
        X[i, bad[i] :] = np.nan
        Y[i, bad[i] :] = np.nan
    return X, Y


@dataclass
class CoupledPaths:
    """Fine and coarse scheme paths driven by the same Brownian path."""

    fine_grid: TimeGrid
    coarse_grid: TimeGrid
    fine: np.ndarray
    coarse: np.ndarray
    fine_increments: np.ndarray
    coarse_increments: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if not is_refinement(self.fine_grid, self.coarse_grid):
            raise DomainError("coarse grid must divide the fine grid")
        if self.coarse_increments is None:
            self.coarse_increments = coarsen_increments(np.atleast_2d(self.fine_increments), self.factor)

    @property
    def factor(self) -> int:
        return self.fine_grid.n // self.coarse_grid.n

    def coupling_exact(self) -> bool:
        recomputed = coarsen_increments(np.atleast_2d(self.fine_increments), self.factor)
        return bool(np.array_equal(recomputed, np.atleast_2d(self.coarse_increments)))


def couple(cfg: EMConfig, coarse_n: int, fine_increments, scheme: Callable = em_path) -> CoupledPaths:
    """Run ``scheme`` on ``cfg.grid`` and on a coarser grid with summed noise."""
    from dataclasses import replace

    coarse_grid = TimeGrid(cfg.grid.T, coarse_n)
    if not is_refinement(cfg.grid, coarse_grid):
        raise DomainError(f"{coarse_n} does not divide {cfg.grid.n}")
    dB = np.atleast_2d(np.asarray(fine_increments, dtype=float))
    dBc = coarsen_increments(dB, cfg.grid.n // coarse_n)
    fine = scheme(cfg, dB)
    coarse = scheme(replace(cfg, grid=coarse_grid), dBc)
    return CoupledPaths(cfg.grid, coarse_grid, fine, coarse, dB, dBc)
