from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k T / n`` on ``[0, T]``."""

    T: float
    n: int

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"horizon must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"step count must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.dt

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.n * int(factor))

    def eta(self, s):
        return eta(self, s)


def eta(grid: TimeGrid, s):
    """Left grid node of ``s``.

    Returns ``k T / n`` for ``s`` in ``[k T / n, (k+1) T / n)``. The right
    endpoint maps to the last node strictly below ``T`` so that a step
    index derived from it never runs past the grid.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr > grid.T) or np.any(~np.isfinite(s_arr)):
        raise DomainError(f"time outside [0, {grid.T}]")
    k = np.minimum(_floor_index(s_arr * grid.n / grid.T), grid.n - 1)
    out = k * grid.T / grid.n
    if np.ndim(s) == 0:
        return float(out)
    return out


def step_index(grid: TimeGrid, s):
    """Integer index ``k`` with ``eta(s) = t_k``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr > grid.T):
        raise DomainError(f"time outside [0, {grid.T}]")
    k = np.minimum(_floor_index(s_arr * grid.n / grid.T), grid.n - 1).astype(np.int64)
    if np.ndim(s) == 0:
        return int(k)
    return k


def _floor_index(u):
    # s = k T / n computed in floating point may land a few ulps below k
    r = np.round(u)
    snap = np.abs(u - r) <= 1e-10 * np.maximum(1.0, np.abs(u))
    return np.where(snap, r, np.floor(u))


def is_refinement(fine: TimeGrid, coarse: TimeGrid) -> bool:
    return math.isclose(fine.T, coarse.T) and fine.n % coarse.n == 0
