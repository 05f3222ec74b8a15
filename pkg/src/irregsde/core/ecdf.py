from __future__ import annotations

import numpy as np

from .errors import DomainError


class EmpiricalCDF:
    """Right-continuous empirical distribution function ``#{X_i <= x} / M``."""

    __slots__ = ("_samples",)

    def __init__(self, samples):
        s = np.sort(np.asarray(samples, dtype=float).ravel())
        if s.size == 0:
            raise DomainError("empirical CDF needs at least one sample")
        if not np.all(np.isfinite(s)):
            raise DomainError("empirical CDF samples must be finite")
        s.setflags(write=False)
        self._samples = s

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def size(self) -> int:
        return self._samples.size

    def __call__(self, x):
        return ecdf_eval(self, x)

    def quantile(self, s):
        """Skorokhod inverse ``inf{x : F(x) >= s}``, the ``ceil(s M)``-th order statistic."""
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr <= 0) or np.any(s_arr > 1):
            raise DomainError("quantile level must lie in (0, 1]")
        M = self.size
        k = np.ceil(s_arr * M - 1e-12 * M).astype(np.int64)
        k = np.clip(k, 1, M)
        out = self._samples[k - 1]
        if np.ndim(s) == 0:
            return float(out)
        return out

    def min_gap(self) -> float:
        d = np.diff(self._samples)
        d = d[d > 0]
        return float(d.min()) if d.size else 0.0

    def __repr__(self):
        return f"EmpiricalCDF(M={self.size})"


def ecdf_eval(F: EmpiricalCDF, x):
    out = np.searchsorted(F.samples, np.asarray(x, dtype=float), side="right") / F.size
    if np.ndim(x) == 0:
        return float(out)
    return out
