from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import TimeGrid


@dataclass
class PathEnsemble:
    """``M`` paths on a uniform grid together with the noise that drove them.

    ``values`` has shape ``(M, n + 1)``; ``increments`` has shape ``(M, n)``
    (or ``(M, n, k)`` when a driver carries extra channels). Rows that hit a
    non-finite state are marked in ``diverged_at`` with the first bad step
    index (``-1`` for healthy rows) and are filled with NaN from that step on.
    """

    grid: TimeGrid
    values: np.ndarray
    increments: Optional[np.ndarray] = None
    diverged_at: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.n + 1:
            raise ValueError(
                f"values have {self.values.shape[1]} columns, grid has {self.grid.n + 1} nodes"
            )
        if self.diverged_at is None:
            self.diverged_at = first_nonfinite(self.values)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def diverged(self) -> np.ndarray:
        return self.diverged_at >= 0

    @property
    def n_diverged(self) -> int:
        return int(np.count_nonzero(self.diverged))

    def healthy(self) -> np.ndarray:
        return self.values[~self.diverged]

    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


def first_nonfinite(values: np.ndarray) -> np.ndarray:
    """Index of the first non-finite entry in every row, ``-1`` if none."""
    bad = ~np.isfinite(values)
    any_bad = bad.any(axis=1)
    return np.where(any_bad, bad.argmax(axis=1), -1)


def coarsen_increments(dW: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` fine increments along axis 1.

    Summation is strictly left to right within each block so the result
    matches ``sum(fine[k*f:(k+1)*f])`` evaluated sequentially, bit for bit.
    """
    factor = int(factor)
    if factor == 1:
        return dW
    M, n = dW.shape[:2]
    if n % factor:
        raise ValueError(f"{n} fine steps do not split into blocks of {factor}")
    blocks = dW.reshape((M, n // factor, factor) + dW.shape[2:])
    out = blocks[:, :, 0].copy()
    for k in range(1, factor):
        out += blocks[:, :, k]
    return out
