"""Explicit lattice scheme for the Dirichlet stochastic heat equation

    du = (u_xx + b(t, x, u)) dt + sigma(t, x, u) W(dt, dx)  on [0, T] x [0, 1],

with its spectral and heat-kernel oracles.

Coefficients are either constants or vectorised callables ``f(t, x, u)``
where ``x`` holds the interior nodes and ``u`` the matching field values.
"""
from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .core.errors import CflViolation, DivergedFieldError, DomainError
from .core.parallel import DEFAULT_BLOCK, run_blocks
from .core.rng import RngStream

Coef = Union[float, Callable]

_MAGIC = b"SHEF"
_HEADER = struct.Struct("<4sIQQdq")  # magic, version, m, n, T, seed (-1 = none)


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _coef(c: Coef):
    if callable(c):
        return c
    c = float(c)
    return lambda t, x, u: np.full(np.shape(u), c)


@dataclass(frozen=True)
class SheConfig:
    T: float
    m: int
    n: int
    drift: Coef = 0.0
    diffusion: Coef = 0.0
    u0: Callable = _zero
    override_cfl: bool = False

    @property
    def dt(self) -> float:
        return self.T / self.m

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    @property
    def cfl_ok(self) -> bool:
        return self.m >= 2 * self.T * self.n**2

    def amplification(self) -> float:
        """Largest modulus of the one-step mode multipliers ``1 + lambda_j T/m``."""
        return float(np.max(np.abs(mode_multipliers(self.m, self.n, self.T))))

    def validate(self) -> bool:
        if not self.T > 0:
            raise DomainError(f"horizon must be positive, got {self.T}")
        if int(self.m) != self.m or self.m < 1 or int(self.n) != self.n or self.n < 2:
            raise DomainError(f"need integers m >= 1 and n >= 2, got m={self.m}, n={self.n}")
        ends = np.asarray(self.u0(np.array([0.0, 1.0])), dtype=float)
        if np.any(np.abs(ends) > 1e-12):
            raise DomainError(f"initial datum must vanish at 0 and 1, got {ends.tolist()}")
        if not self.cfl_ok:
            msg = (
                f"CFL condition m >= 2 T n^2 violated: m={self.m}, 2Tn^2={2 * self.T * self.n**2:g} "
                f"(amplification {self.amplification():.4g})"
            )
            if not self.override_cfl:
                raise CflViolation(msg)
            warnings.warn(msg + "; continuing because the override is set", RuntimeWarning, stacklevel=2)
        return True


@dataclass
class LatticeField:
    """Field values ``values[i, j]`` at ``t_i = iT/m``, ``x_j = j/n``."""

    values: np.ndarray
    T: float
    seed: Optional[int] = None
    flags: tuple = field(default=())

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 2 or self.values.shape[1] < 3:
            raise DomainError(f"lattice needs shape (m+1, n+1) with m >= 1, n >= 2, got {self.values.shape}")
        if np.any(self.values[:, 0] != 0) or np.any(self.values[:, -1] != 0):
            raise DomainError("boundary columns must be identically zero")

    @property
    def m(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n(self) -> int:
        return self.values.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.m + 1) * (self.T / self.m)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    def __call__(self, t, x):
        """Piecewise bilinear interpolation, linear in ``x`` at the two bracketing
        time rows and then linear in ``t``."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if np.any((t < 0) | (t > self.T * (1 + 1e-12))) or np.any((x < 0) | (x > 1)):
            raise DomainError("evaluation point outside [0, T] x [0, 1]")
        a = np.clip(t * self.m / self.T, 0, self.m)
        i = np.minimum(np.floor(a + 1e-10).astype(int), self.m - 1)
        ft = np.clip(a - i, 0.0, 1.0)
        c = x * self.n
        j = np.minimum(np.floor(c + 1e-10).astype(int), self.n - 1)
        fx = np.clip(c - j, 0.0, 1.0)
        V = self.values
        lo = V[i, j] + fx * (V[i, j + 1] - V[i, j])
        hi = V[i + 1, j] + fx * (V[i + 1, j + 1] - V[i + 1, j])
        out = lo + ft * (hi - lo)
        return float(out) if out.ndim == 0 else out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "t", "x", "value"])
            t, x = self.times, self.nodes
            for i in range(self.m + 1):
                for j in range(self.n + 1):
                    w.writerow([i, j, repr(float(t[i])), repr(float(x[j])), repr(float(self.values[i, j]))])

    def to_binary(self, path) -> None:
        """Header ``(magic, version, m, n, T, seed)`` then float64 values, row-major, little-endian."""
        seed = -1 if self.seed is None else int(self.seed)
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, 1, self.m, self.n, float(self.T), seed))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "LatticeField":
        with open(path, "rb") as fh:
            raw = fh.read()
        magic, version, m, n, T, seed = _HEADER.unpack_from(raw)
        if magic != _MAGIC or version != 1:
            raise DomainError("not a lattice-field file")
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if body.size != (m + 1) * (n + 1):
            raise DomainError("lattice-field file is truncated")
        return cls(body.reshape(m + 1, n + 1).copy(), T, None if seed < 0 else seed)


# --- lattice operators ------------------------------------------------------------------


def discrete_laplacian(left, mid, right, n: int):
    """``n^2 (right - 2 mid + left)``."""
    out = n * n * (np.asarray(right, dtype=float) - 2 * np.asarray(mid, dtype=float) + np.asarray(left, dtype=float))
    return float(out) if out.ndim == 0 else out


def lattice_eigen(j, n: int):
    """Eigenvalue ``-4 n^2 sin^2(j pi / 2n)`` of the discrete Dirichlet Laplacian."""
    j = np.asarray(j)
    if np.any(j != np.floor(j)) or np.any(j < 1) or np.any(j > n - 1):
        raise DomainError(f"mode index must be an integer in [1, {n - 1}]")
    out = -4.0 * n * n * np.sin(j * np.pi / (2 * n)) ** 2
    return float(out) if out.ndim == 0 else out


def mode_multipliers(m: int, n: int, T: float) -> np.ndarray:
    return 1.0 + lattice_eigen(np.arange(1, n), n) * (T / m)


def brownian_sheet_cells(m: int, n: int, T: float, rng: np.random.Generator) -> np.ndarray:
    """Independent sheet increments over the ``m x n`` lattice cells, each ``N(0, T/(mn))``."""
    if m < 1 or n < 1:
        raise DomainError("need m, n >= 1")
    return rng.standard_normal((m, n)) * math.sqrt(T / (m * n))


def box_values(cells, m: int, n: int, T: float):
    """Cell increments divided by the cell area ``T/(mn)``."""
    return np.asarray(cells, dtype=float) * (m * n / T)


def gyongy_step(row, cfg: SheConfig, cells_row, i: int = 0):
    """Advance ``row`` (shape ``(..., n+1)``) from ``t_i`` to ``t_{i+1}``.

    ``cells_row`` holds the ``n`` sheet increments of the time slab; node
    ``x_j`` reads the cell ``[x_j, x_{j+1}]``. A single field raises
    :class:`DivergedFieldError` on a non-finite value; for a stack of fields
    the offending replicate is set to NaN.
    """
    u = np.asarray(row, dtype=float)
    ends = u[..., [0, -1]]
    if np.any(ends[np.isfinite(ends)] != 0):
        raise DomainError("row must carry Dirichlet zeros")
    n, dt = cfg.n, cfg.dt
    t = i * dt
    x = cfg.nodes[1:-1]
    ui = u[..., 1:-1]
    with np.errstate(over="ignore", invalid="ignore"):
        nxt = ui + dt * discrete_laplacian(u[..., :-2], ui, u[..., 2:], n)
        nxt = nxt + dt * _coef(cfg.drift)(t, x, ui)
        if cfg.diffusion is not None and (callable(cfg.diffusion) or cfg.diffusion != 0):
            box = box_values(np.asarray(cells_row)[..., 1:], cfg.m, n, cfg.T)
            nxt = nxt + dt * _coef(cfg.diffusion)(t, x, ui) * box
    out = np.zeros(u.shape)
    out[..., 1:-1] = nxt
    bad = ~np.isfinite(nxt)
    if bad.any():
        if u.ndim == 1:
            raise DivergedFieldError(i + 1, int(np.argmax(bad)) + 1)
        out[bad.any(axis=-1)] = np.nan
    return out


def _initial_row(cfg: SheConfig, shape=()):
    row = np.zeros(shape + (cfg.n + 1,))
    row[..., 1:-1] = np.asarray(cfg.u0(cfg.nodes[1:-1]), dtype=float)
    return row


def she_simulate(cfg: SheConfig, rng: Optional[np.random.Generator] = None, cells=None, seed=None) -> LatticeField:
    """Full lattice rollout.

    Noise is taken from ``cells`` (shape ``(m, n)``) when given, otherwise
    drawn from ``rng`` one time slab at a time (the same stream of values as
    :func:`brownian_sheet_cells`).
    """
    cfg.validate()
    m, n = cfg.m, cfg.n
    noisy = callable(cfg.diffusion) or cfg.diffusion != 0
    if cells is not None:
        cells = np.asarray(cells, dtype=float)
        if cells.shape != (m, n):
            raise DomainError(f"cells must have shape {(m, n)}, got {cells.shape}")
    elif noisy and rng is None:
        raise DomainError("a random generator or explicit cells are needed when sigma is not zero")
    sd = math.sqrt(cfg.T / (m * n))
    U = np.empty((m + 1, n + 1))
    U[0] = _initial_row(cfg)
    empty = np.zeros(n)
    for i in range(m):
        if cells is not None:
            c = cells[i]
        elif noisy:
            c = rng.standard_normal(n) * sd
        else:
            c = empty
        U[i + 1] = gyongy_step(U[i], cfg, c, i)
    flags = () if cfg.cfl_ok else ("cfl-override",)
    return LatticeField(U, cfg.T, seed, flags)


def she_rollout(cfg: SheConfig, M: int, rng: np.random.Generator, rows=None) -> np.ndarray:
    """``M`` independent replicates advanced together; shape ``(M, len(rows), n+1)``.

    ``rows`` defaults to ``[m]``. Diverged replicates are NaN. The
    configuration is assumed validated.
    """
    m, n = cfg.m, cfg.n
    rows = [m] if rows is None else sorted(int(r) for r in rows)
    if not rows or rows[0] < 0 or rows[-1] > m:
        raise DomainError(f"time rows must lie in [0, {m}]")
    sd = math.sqrt(cfg.T / (m * n))
    want = set(rows)
    u = _initial_row(cfg, (M,))
    out = np.empty((M, len(rows), n + 1))
    k = 0
    if 0 in want:
        out[:, k] = u
        k += 1
    for i in range(rows[-1]):
        u = gyongy_step(u, cfg, rng.standard_normal((M, n)) * sd, i)
        if i + 1 in want:
            out[:, k] = u
            k += 1
    return out


def she_ensemble(
    cfg: SheConfig,
    M: int,
    stream: RngStream,
    rows=None,
    threads: Optional[int] = None,
    block_size: int = DEFAULT_BLOCK,
) -> np.ndarray:
    """Block-parallel :func:`she_rollout`; identical output for any thread count."""
    cfg.validate()

    def block(b, s, size):
        return she_rollout(cfg, size, s.generator(), rows)

    return np.concatenate(run_blocks(block, M, stream, threads, block_size))


# --- oracles ------------------------------------------------------------------------------


def phi(j, x):
    """``sqrt(2) sin(j pi x)``."""
    return math.sqrt(2.0) * np.sin(np.multiply.outer(np.asarray(j, dtype=float), np.asarray(x, dtype=float)) * np.pi)


def phi_lattice(j, n: int, x):
    """Polygonal interpolation of ``phi_j`` through the nodes ``k/n``."""
    x = np.asarray(x, dtype=float)
    k = np.minimum(np.floor(x * n + 1e-12).astype(int), n - 1)
    w = np.clip(x * n - k, 0.0, 1.0)
    a = phi(j, k / n)
    b = phi(j, (k + 1) / n)
    return a + w * (b - a)


def kappa(x, n: int):
    """``floor(n x)/n``."""
    return np.floor(np.asarray(x, dtype=float) * n + 1e-12) / n


def spectral_kernel_G(m: int, n: int, T: float, t, x, y):
    """``sum_j (1 + lambda_j T/m)^{floor(mt/T)} phi_j^n(x) phi_j^n(kappa_n(y))``."""
    if not (0 <= t <= T * (1 + 1e-12)):
        raise DomainError(f"t must lie in [0, T], got {t}")
    power = int(math.floor(m * t / T + 1e-10))
    j = np.arange(1, n)
    mult = mode_multipliers(m, n, T) ** power
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    fx = phi_lattice(j, n, x)
    fy = phi_lattice(j, n, kappa(y, n))
    out = np.tensordot(mult, fx * fy, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def spectral_linear_solution(cfg: SheConfig, i: int) -> np.ndarray:
    """Row ``i`` of the ``b = sigma = 0`` field as ``int_0^1 G(t_i, x_j, y) u0(kappa_n(y)) dy``.

    ``kappa_n(y)`` is piecewise constant, so the integral is the exact
    discrete inner product over the nodes.
    """
    n = cfg.n
    j = np.arange(1, n)
    xs = cfg.nodes
    u0 = np.zeros(n + 1)
    u0[1:-1] = cfg.u0(xs[1:-1])
    coeff = phi(j, xs[:-1]) @ u0[:-1] / n
    row = (mode_multipliers(cfg.m, n, cfg.T) ** i * coeff) @ phi(j, xs)
    row[0] = row[-1] = 0.0
    return row


def heat_kernel_G(t: float, x, y, image_terms: int = 6, convention: str = "laplacian"):
    """Dirichlet heat kernel on ``[0, 1]`` by the method of images.

    ``convention="laplacian"`` is the kernel of ``u_t = u_xx`` (Gaussian
    variance ``2t``); ``"half_laplacian"`` that of ``u_t = u_xx / 2``
    (variance ``t``). Image indices run over ``|k| <= image_terms``.
    """
    if not t > 0:
        raise DomainError(f"heat kernel needs t > 0, got {t}")
    if image_terms < 1:
        raise DomainError("need at least one image term")
    if convention == "laplacian":
        v = 2.0 * t
    elif convention == "half_laplacian":
        v = t
    else:
        raise DomainError(f"unknown convention {convention!r}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = 2.0 * np.arange(-image_terms, image_terms + 1)
    shape = np.broadcast_shapes(x.shape, y.shape)
    x = np.broadcast_to(x, shape)[..., None]
    y = np.broadcast_to(y, shape)[..., None]
    s = np.exp(-((y - x + k) ** 2) / (2 * v)) - np.exp(-((y + x + k) ** 2) / (2 * v))
    out = s.sum(axis=-1) / math.sqrt(2 * math.pi * v)
    return float(out) if out.ndim == 0 else out


def discrete_variance(cfg: SheConfig, x_index: int, i: Optional[int] = None, sigma: float = 1.0) -> float:
    """Exact variance of the additive-noise field (``b = 0``, ``u0 = 0``) at ``(t_i, x_j)``."""
    i = cfg.m if i is None else int(i)
    n = cfg.n
    if not 0 <= x_index <= n:
        raise DomainError("node index out of range")
    mu2 = mode_multipliers(cfg.m, n, cfg.T) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        geo = np.where(np.abs(1 - mu2) > 1e-14, (1 - mu2**i) / (1 - mu2), float(i))
    f2 = phi(np.arange(1, n), x_index / n) ** 2
    return float(sigma**2 * cfg.dt * np.sum(f2 * geo))


def continuum_variance(t: float, x: float, sigma: float = 1.0, rtol: float = 1e-10) -> float:
    """``int_0^t int_0^1 G(t-s, x, y)^2 dy ds`` for ``u_t = u_xx``.

    Each mode integrates to ``sin^2(j pi x)(1 - e^{-2 j^2 pi^2 t})/(j^2 pi^2)``;
    the time-independent part sums to ``x(1-x)/2`` in closed form and only the
    exponentially small remainder is summed.
    """
    if t < 0 or not 0 <= x <= 1:
        raise DomainError("need t >= 0 and x in [0, 1]")
    if t == 0:
        return 0.0
    total = x * (1 - x) / 2
    j = 1
    while True:
        term = math.sin(j * math.pi * x) ** 2 * math.exp(-2 * j * j * math.pi**2 * t) / (j * j * math.pi**2)
        total -= term
        if math.exp(-2 * j * j * math.pi**2 * t) / (j * j * math.pi**2) <= rtol * abs(total) or j > 10**7:
            break
        j += 1
    return sigma**2 * total


def heat_solution_sine(t: float, x):
    """``e^{-pi^2 t} sin(pi x)``: the exact field for ``u0 = sin(pi x)``, ``b = sigma = 0``."""
    return math.exp(-math.pi**2 * t) * np.sin(np.pi * np.asarray(x, dtype=float))


# --- rates --------------------------------------------------------------------------------


def theoretical_rate_Gy(m, n) -> float:
    """Error shape ``m^{-1/4} + n^{-1/2}`` of the lattice scheme for Lipschitz data."""
    if m < 1 or n < 1:
        raise DomainError("need m, n >= 1")
    return float(m) ** -0.25 + float(n) ** -0.5


def theoretical_rate_main11(rho: float, gamma: float, eps: float, holder_drift: bool = False):
    """Exponents ``(r_m, r_n)`` of the weak error ``m^{-r_m} + n^{-r_n}``.

    ``r_m = min(rho, (1-eps) gamma/4)/4`` and ``r_n = 2 r_m``; for a drift that
    is itself ``gamma``-Hölder the factor ``(1-eps) gamma/4`` becomes ``gamma``.
    """
    if not 0 < rho <= 1 or not 0 < gamma <= 1:
        raise DomainError("rho and gamma must lie in (0, 1]")
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    k = min(rho, gamma if holder_drift else (1 - eps) * gamma / 4)
    return k / 4, k / 2
