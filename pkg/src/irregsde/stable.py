"""Symmetric alpha-stable increments and the Euler scheme ``dX = sigma(X-) dZ``."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core.coefficients import Coefficient1D
from .core.errors import DivergedPathError, DomainError
from .core.grid import TimeGrid
from .core.parallel import DEFAULT_BLOCK, run_blocks
from .core.paths import PathEnsemble
from .core.rng import RngStream


def _check_alpha(alpha):
    if not 1 < alpha <= 2:
        raise DomainError(f"stability index must lie in (1, 2], got {alpha}")


@dataclass(frozen=True)
class StableConfig:
    alpha: float
    grid: TimeGrid
    diffusion: Coefficient1D
    x0: float = 0.0

    def __post_init__(self):
        _check_alpha(self.alpha)

    def validate(self) -> bool:
        s = self.diffusion
        if s.sup_bound is None or not s.ellipticity_floor:
            raise DomainError("the stable-driven scheme needs sigma with declared sup bound and positive floor")
        s.validate(diffusion=True)
        return True

    def check_moment(self, p: float) -> float:
        """Moments of order ``p >= alpha`` are infinite and cannot be estimated."""
        if not 0 < p < self.alpha:
            raise DomainError(f"moment order {p} must lie in (0, alpha={self.alpha})")
        return p


def sample_stable_increment(alpha: float, dt: float, rng: np.random.Generator, size=None):
    """Draws with characteristic function ``exp(-dt |xi|^alpha)``.

    Chambers-Mallows-Stuck with ``V`` uniform on ``(-pi/2, pi/2)`` and ``E``
    standard exponential; ``alpha = 2`` reduces to ``N(0, 2 dt)``.
    """
    _check_alpha(alpha)
    if not dt > 0:
        raise DomainError(f"time step must be positive, got {dt}")
    V = rng.uniform(-math.pi / 2, math.pi / 2, size)
    E = rng.standard_exponential(size)
    X = np.sin(alpha * V) / np.cos(V) ** (1 / alpha) * (np.cos(V - alpha * V) / E) ** ((1 - alpha) / alpha)
    out = dt ** (1 / alpha) * X
    return float(out) if size is None else out


def stable_increments(alpha: float, grid: TimeGrid, M: int, stream: RngStream) -> np.ndarray:
    return sample_stable_increment(alpha, grid.dt, stream.generator(), (M, grid.n))


def stable_em_path(cfg: StableConfig, increments) -> np.ndarray:
    """``X_{k+1} = X_k + sigma(t_k, X_k) dZ_k``."""
    dZ = np.asarray(increments, dtype=float)
    single = dZ.ndim == 1
    if single:
        dZ = dZ[None, :]
    n = cfg.grid.n
    if dZ.shape[1] != n:
        raise DomainError(f"expected {n} increments per path, got {dZ.shape[1]}")
    sf = cfg.diffusion.fn
    X = np.empty((dZ.shape[0], n + 1))
    X[:, 0] = cfg.x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            x = X[:, k]
            nxt = x + sf(k * cfg.grid.dt, x) * dZ[:, k]
            bad = ~np.isfinite(nxt)
            if bad.any():
                if single:
                    raise DivergedPathError(k + 1)
                nxt[bad] = np.nan
            X[:, k + 1] = nxt
    return X[0] if single else X


def simulate_stable(
    cfg: StableConfig, M: int, stream: RngStream, threads: Optional[int] = None, block_size: int = DEFAULT_BLOCK
) -> PathEnsemble:
    cfg.validate()

    def block(b, s, m):
        return stable_em_path(cfg, stable_increments(cfg.alpha, cfg.grid, m, s))

    return PathEnsemble(cfg.grid, np.concatenate(run_blocks(block, M, stream, threads, block_size)))


@dataclass(frozen=True)
class RateDescriptor:
    """Predicted decay ``n^{-exponent}`` (power) or ``(log n)^{-exponent}`` (log)."""

    model: str
    exponent: float
    moment_order: float = 1.0


def theoretical_rate_main5(alpha: float) -> RateDescriptor:
    """Logarithmic rate ``(log n)^{-(alpha-1)}`` for the ``(alpha-1)``-th error moment."""
    if not 1 < alpha < 2:
        raise DomainError("the logarithmic rate applies for alpha in (1, 2)")
    return RateDescriptor("log", alpha - 1, alpha - 1)


def tail_exponent(samples, lo: float = 10.0, hi: float = 100.0, points: int = 12) -> float:
    """Exponent ``a`` of a fit ``P(|Z| > x) ~ C x^{-a}`` on ``[lo, hi]``.

    Weighted least squares of log exceedance counts on a geometric grid,
    with Poisson weights ``sqrt(count)``.
    """
    z = np.sort(np.abs(np.asarray(samples, dtype=float)))
    if not 0 < lo < hi:
        raise DomainError("need 0 < lo < hi")
    xs = np.geomspace(lo, hi, points)
    counts = z.size - np.searchsorted(z, xs, side="right")
    if np.any(counts == 0):
        raise DomainError("fitting window extends beyond the sample maximum")
    slope = np.polyfit(np.log(xs), np.log(counts), 1, w=np.sqrt(counts))[0]
    return float(-slope)
