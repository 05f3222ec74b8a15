"""Fractional Brownian motion: covariance, exact samplers, the Volterra kernel
and the Euler scheme ``dX = b(X) dt + dB^H``."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, linalg
from scipy.special import gamma as G

from .core.coefficients import Coefficient1D
from .core.errors import DivergedPathError, DomainError, FactorizationError
from .core.grid import TimeGrid
from .core.parallel import DEFAULT_BLOCK, run_blocks
from .core.paths import PathEnsemble
from .core.rng import RngStream


def _check_H(H):
    if not 0 < H < 1:
        raise DomainError(f"Hurst index must lie in (0, 1), got {H}")


def fbm_covariance(H: float, t, s):
    """``E[B^H(t) B^H(s)] = (|t|^{2H} + |s|^{2H} - |t-s|^{2H}) / 2``."""
    _check_H(H)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise DomainError("times must be non-negative")
    h2 = 2 * H
    out = 0.5 * (np.abs(t) ** h2 + np.abs(s) ** h2 - np.abs(t - s) ** h2)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=4)
def _cholesky_factor(H: float, T: float, n: int):
    nodes = np.arange(1, n + 1) * (T / n)
    C = fbm_covariance(H, nodes[:, None], nodes[None, :])
    scale = float(np.trace(C)) / n
    jitter = 0.0
    for attempt in range(8):
        try:
            L = linalg.cholesky(C + jitter * np.eye(n), lower=True, check_finite=False)
            break
        except linalg.LinAlgError:
            jitter = scale * 10.0 ** (-14 + attempt)
    else:
        raise FactorizationError(jitter)
    if jitter:
        warnings.warn(f"fBm covariance regularised with jitter {jitter:.3g}", RuntimeWarning, stacklevel=3)
    L.setflags(write=False)
    return L, jitter


@lru_cache(maxsize=4)
def _circulant_eigenvalues(H: float, n: int):
    k = np.arange(n + 1, dtype=float)
    h2 = 2 * H
    gam = 0.5 * (np.abs(k + 1) ** h2 - 2 * k**h2 + np.abs(k - 1) ** h2)
    row = np.concatenate([gam, gam[-2:0:-1]])
    lam = np.fft.fft(row).real
    lam.setflags(write=False)
    return lam


def _circulant_increments(H, grid, M, rng):
    n = grid.n
    lam = _circulant_eigenvalues(H, n)
    if lam.min() < -1e-10 * lam.max():
        return None
    root = np.sqrt(np.clip(lam, 0.0, None) / (2 * n))
    pairs = (M + 1) // 2
    xi = rng.standard_normal((pairs, 2 * n)) + 1j * rng.standard_normal((pairs, 2 * n))
    w = np.fft.fft(root * xi, axis=1)[:, :n]
    # real and imaginary parts are independent exact fGn samples
    fgn = np.concatenate([w.real, w.imag])[:M]
    return fgn * grid.dt**H


def fbm_sample(H: float, grid: TimeGrid, rng: np.random.Generator, M: int = 1, method: str = "cholesky"):
    """Exact fBm draws at the grid nodes.

    Returns ``(increments, path)`` with shapes ``(M, n)`` and ``(M, n + 1)``.
    ``method="circulant"`` uses Davies-Harte embedding of the increments and
    falls back to Cholesky if the embedding has negative eigenvalues.
    """
    _check_H(H)
    if method not in ("cholesky", "circulant"):
        raise DomainError(f"unknown sampler {method!r}")
    if method == "circulant":
        dBH = _circulant_increments(H, grid, M, rng)
        if dBH is not None:
            path = np.concatenate([np.zeros((M, 1)), np.cumsum(dBH, axis=1)], axis=1)
            return dBH, path
        warnings.warn("circulant embedding not positive; using Cholesky", RuntimeWarning, stacklevel=2)
    L, _ = _cholesky_factor(float(H), grid.T, grid.n)
    values = rng.standard_normal((M, grid.n)) @ L.T
    path = np.concatenate([np.zeros((M, 1)), values], axis=1)
    return np.diff(path, axis=1), path


# --- Volterra kernel -----------------------------------------------------------------


def _series_2f1(a, b, c, z, rtol=1e-14, max_terms=2000):
    z = np.asarray(z, dtype=float)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(max_terms):
        term = term * (a + k) * (b + k) / ((c + k) * (k + 1)) * z
        total = total + term
        if np.all(np.abs(term) <= rtol * np.abs(total)):
            break
    return total


def _hyp_w(H, w):
    """``F(H - 1/2, 2H; H + 1/2; w)`` for ``w`` in ``[0, 1)``.

    Direct series for ``w <= 1/2``; above that the ``1 - w`` connection
    formula, whose first branch collapses to ``w^{1/2 - H}``.
    """
    a, b, c = H - 0.5, 2 * H, H + 0.5
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    lo = w <= 0.5
    out[lo] = _series_2f1(a, b, c, w[lo])
    if np.any(~lo):
        v = w[~lo]
        A = G(c) * G(1 - 2 * H) / G(0.5 - H)
        B = G(c) * G(2 * H - 1) / (G(a) * G(b))
        out[~lo] = A * v ** (0.5 - H) + (1 - v) ** (1 - 2 * H) * B * _series_2f1(1.0, 0.5 - H, 2 - 2 * H, 1 - v)
    return out


def kernel_constant(H: float) -> float:
    """``c_H`` with ``int_0^t (c_H k_H(t, s))^2 ds = t^{2H}``."""
    return math.sqrt(2 * H * G(1.5 - H) * G(H + 0.5) / G(2 - 2 * H))


def kernel_K_H(H: float, t, s, normalized: bool = True):
    """Volterra kernel with ``B^H(t) = int_0^t K_H(t, s) dW(s)``.

    ``(t-s)^{H-1/2} / Gamma(H+1/2) * F(H-1/2, 1/2-H; H+1/2; 1 - t/s)``, times
    ``c_H`` unless ``normalized=False``. The negative hypergeometric argument
    is moved to ``w = (t - s)/t`` by Pfaff's transformation.
    """
    _check_H(H)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= t):
        raise DomainError("kernel needs 0 < s < t")
    t, s = np.broadcast_arrays(t, s)
    if H == 0.5:
        out = np.ones(t.shape)
    else:
        w = (t - s) / t
        F = (t / s) ** (0.5 - H) * _hyp_w(H, w.ravel()).reshape(t.shape)
        out = (t - s) ** (H - 0.5) / G(H + 0.5) * F
        if normalized:
            out = kernel_constant(H) * out
    return float(out) if out.ndim == 0 else out


def kernel_isometry(H: float, t: float, normalized: bool = True) -> float:
    """``int_0^t K_H(t, s)^2 ds`` by quadrature with algebraic end weights."""
    e = 2 * H - 1

    def f(s):
        # the weighted integrand is bounded; nudge off the endpoints quadpack may probe
        s = min(max(s, t * 1e-15), t * (1 - 1e-15))
        return kernel_K_H(H, t, s, normalized) ** 2 / (s**e * (t - s) ** e)

    val, _ = integrate.quad(f, 0, t, weight="alg", wvar=(e, e), epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


# --- scheme ----------------------------------------------------------------------------


@dataclass(frozen=True)
class FbmConfig:
    H: float
    grid: TimeGrid
    drift: Coefficient1D
    x0: float = 0.0

    def __post_init__(self):
        _check_H(self.H)

    @property
    def in_rate_regime(self) -> bool:
        """The strong rates below are only claimed for ``H < 1/2``."""
        return self.H < 0.5


def fbm_em_path(cfg: FbmConfig, increments) -> np.ndarray:
    """``X_{k+1} = X_k + b(t_k, X_k) T/n + dB^H_k``."""
    d = np.asarray(increments, dtype=float)
    single = d.ndim == 1
    if single:
        d = d[None, :]
    n = cfg.grid.n
    if d.shape[1] != n:
        raise DomainError(f"expected {n} increments per path, got {d.shape[1]}")
    h = cfg.grid.dt
    bf = cfg.drift.fn
    X = np.empty((d.shape[0], n + 1))
    X[:, 0] = cfg.x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            x = X[:, k]
            nxt = x + bf(k * h, x) * h + d[:, k]
            bad = ~np.isfinite(nxt)
            if bad.any():
                if single:
                    raise DivergedPathError(k + 1)
                nxt[bad] = np.nan
            X[:, k + 1] = nxt
    return X[0] if single else X


def simulate_fbm_em(
    cfg: FbmConfig,
    M: int,
    stream: RngStream,
    threads: Optional[int] = None,
    method: str = "cholesky",
    block_size: int = DEFAULT_BLOCK,
) -> PathEnsemble:
    def block(b, s, m):
        dBH, _ = fbm_sample(cfg.H, cfg.grid, s.generator(), m, method)
        return fbm_em_path(cfg, dBH)

    return PathEnsemble(cfg.grid, np.concatenate(run_blocks(block, M, stream, threads, block_size)))


def theoretical_rate_main7(H: float, gamma: float, p: float, eps: float) -> float:
    """Strong-rate exponent for the fBm Euler scheme with irregular drift.

    ``p >= 2``: ``(1-eps)H/(p(H+1))`` when ``p gamma >= 1``, else
    ``(1-eps) gamma H/(H+1)``. ``p = 1`` gives the ``L^1`` rate.
    """
    if not 0 < H < 0.5:
        raise DomainError("the rate is stated for H < 1/2")
    if not 0 < gamma <= 1:
        raise DomainError("gamma must lie in (0, 1]")
    if not 0 <= eps <= 1:
        raise DomainError("eps must lie in [0, 1]")
    if p == 1:
        return theoretical_rate_main7_L1(H, gamma, eps)
    if p < 2:
        raise DomainError("p must be 1 (L^1 case) or at least 2")
    if p * gamma >= 1:
        return (1 - eps) * H / (p * (H + 1))
    return (1 - eps) * gamma * H / (H + 1)


def theoretical_rate_main7_L1(H: float, gamma: float, eps: float) -> float:
    if not 0 < H < 0.5:
        raise DomainError("the rate is stated for H < 1/2")
    return (1 - eps) * gamma * H / (H + 1)
