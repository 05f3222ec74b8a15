"""Coupled-noise error estimation, multilevel Monte Carlo and rate fitting.

A *scheme family* runs one numerical scheme at several resolutions on a
single draw of fine noise, together with a reference solution on the fine
grid. Every estimator below consumes families through ``run(ns, M, rng)``
and aggregates per-path samples block by block, so results do not depend on
the thread count.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core.coefficients import Coefficient1D
from .core.errors import DomainError, RunFailure
from .core.grid import TimeGrid
from .core.parallel import DEFAULT_BLOCK, run_blocks
from .core.paths import coarsen_increments
from .core.rng import RngStream

ERROR_TYPES = ("strong-sup", "strong-terminal", "weak", "time-averaged-BV", "max-functional")
DIVERGENCE_LIMIT = 0.01


def config_hash(config) -> str:
    """Git-style blob hash of the canonical JSON form of ``config``."""
    data = json.dumps(config, sort_keys=True, default=str, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _as_stream(seed) -> RngStream:
    return seed if isinstance(seed, RngStream) else RngStream(int(seed))


def _seed_of(seed):
    return seed.seed if isinstance(seed, RngStream) else int(seed)


# --- result types ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorPoint:
    n: int
    error: float
    stderr: float
    M: int
    p: float
    error_type: str
    diverged: int = 0


@dataclass
class ErrorCurve:
    points: list
    scheme_id: str = "scheme"
    seed: Optional[int] = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        ns = [pt.n for pt in self.points]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise DomainError("error curve needs strictly increasing n")
        for pt in self.points:
            if not (pt.error >= 0 and pt.stderr >= 0):
                raise DomainError(f"negative error or stderr at n={pt.n}")
            if pt.error_type not in ERROR_TYPES:
                raise DomainError(f"unknown error type {pt.error_type!r}")

    @property
    def ns(self) -> np.ndarray:
        return np.array([pt.n for pt in self.points])

    @property
    def errors(self) -> np.ndarray:
        return np.array([pt.error for pt in self.points])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([pt.stderr for pt in self.points])

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def is_monotone(self, n_se: float = 2.0) -> bool:
        """Nonincreasing in ``n`` up to ``n_se`` pooled standard errors per step."""
        e, s = self.errors, self.stderrs
        return bool(np.all(e[1:] - e[:-1] <= n_se * np.hypot(s[1:], s[:-1])))

    def metadata(self) -> dict:
        return {"scheme": self.scheme_id, "seed": self.seed, "config": self.config, "config_hash": self.config_hash}

    def to_dict(self) -> dict:
        return {**self.metadata(), "points": [asdict(pt) for pt in self.points]}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, default=str)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> "ErrorCurve":
        d = json.loads(text)
        return cls([ErrorPoint(**pt) for pt in d["points"]], d["scheme"], d["seed"], d["config"])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["n", "error", "stderr", "M", "p", "error_type", "diverged"]
        w.writerow(cols + ["scheme", "seed", "config_hash"])
        for pt in self.points:
            row = asdict(pt)
            w.writerow([row[c] for c in cols] + [self.scheme_id, self.seed, self.config_hash])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass(frozen=True)
class RateFit:
    """``e = C n^{-r}`` (power) or ``e = C (log n)^{-s}`` (log)."""

    model: str
    C: float
    exponent: float
    rss: float
    r2: float
    alternative: Optional["RateFit"] = None

    def predict(self, n):
        n = np.asarray(n, dtype=float)
        base = n if self.model == "power" else np.log(n)
        return self.C * base ** (-self.exponent)

    def to_dict(self) -> dict:
        d = {"model": self.model, "C": self.C, "exponent": self.exponent, "rss": self.rss, "r2": self.r2}
        if self.alternative is not None:
            d["alternative"] = self.alternative.to_dict()
        return d


@dataclass(frozen=True)
class MlmcLevel:
    level: int
    n: int
    mean: float
    variance: float
    M: int
    diverged: int = 0


@dataclass
class MlmcReport:
    levels: list
    estimate: float
    stderr: float
    fine_mean: Optional[float] = None
    fine_stderr: Optional[float] = None
    scheme_id: str = "scheme"
    seed: Optional[int] = None
    config: dict = field(default_factory=dict)

    @property
    def variances(self) -> np.ndarray:
        return np.array([lv.variance for lv in self.levels])

    def telescoping_gap(self) -> float:
        """``|estimate - fine_mean|`` in units of the combined standard error."""
        if self.fine_mean is None:
            raise DomainError("no single-level fine estimate was computed")
        se = math.hypot(self.stderr, self.fine_stderr)
        gap = abs(self.estimate - self.fine_mean)
        return 0.0 if gap == 0 else (math.inf if se == 0 else gap / se)

    def telescoping_ok(self, n_se: float = 3.0) -> bool:
        return self.telescoping_gap() <= n_se

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme_id,
            "seed": self.seed,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "estimate": self.estimate,
            "stderr": self.stderr,
            "fine_mean": self.fine_mean,
            "fine_stderr": self.fine_stderr,
            "levels": [asdict(lv) for lv in self.levels],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, default=str)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "n", "mean", "variance", "M", "diverged", "scheme", "seed", "config_hash"])
        h = config_hash(self.config)
        for lv in self.levels:
            w.writerow([lv.level, lv.n, lv.mean, lv.variance, lv.M, lv.diverged, self.scheme_id, self.seed, h])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# --- scheme families ------------------------------------------------------------------------


Noise = Callable[[TimeGrid, int, np.random.Generator], np.ndarray]
Scheme = Callable[[TimeGrid, np.ndarray], np.ndarray]


@dataclass
class SchemeFamily:
    """A scheme at any resolution plus its reference, coupled through the noise.

    ``noise(grid, M, rng)`` draws increments on the fine grid (extra trailing
    channels allowed); coarse increments are block sums. ``reference``
    defaults to the scheme itself. With ``reference_factor=None`` the
    reference runs at each ``n`` on the same increments as the scheme, which
    pairs two schemes at equal resolution.
    """

    T: float
    noise: Noise
    scheme: Scheme
    reference: Optional[Scheme] = None
    reference_factor: Optional[int] = 4
    name: str = "scheme"
    moment_limit: Optional[float] = None
    config: dict = field(default_factory=dict)
    em_config: Optional[Callable] = None

    def fine_n(self, ns) -> int:
        ns = [int(n) for n in ns]
        N = max(ns) * (self.reference_factor or 1)
        for n in ns:
            if N % n:
                raise DomainError(f"the reference grid {N} is not a refinement of n = {n}")
        return N

    def run(self, ns, M: int, rng: np.random.Generator):
        """Returns ``({n: values (M, n+1)}, reference values, N)``.

        In paired mode the reference is a dict keyed like the outputs.
        """
        N = self.fine_n(ns)
        ref_fn = self.reference or self.scheme
        dW = self.noise(TimeGrid(self.T, N), M, rng)
        out, ref = {}, {}
        for n in ns:
            g = TimeGrid(self.T, n)
            dn = coarsen_increments(dW, N // n)
            out[n] = self.scheme(g, dn)
            if self.reference_factor is None:
                ref[n] = ref_fn(g, dn)
        if self.reference_factor is not None:
            ref = ref_fn(TimeGrid(self.T, N), dW)
        return out, ref, N

    def reference_at(self, ref, n: int, N: int) -> np.ndarray:
        """Reference values on the nodes of the ``n``-grid."""
        if isinstance(ref, dict):
            return ref[n]
        return ref[:, :: N // n]


def brownian_noise(grid: TimeGrid, M: int, rng: np.random.Generator) -> np.ndarray:
    return math.sqrt(grid.dt) * rng.standard_normal((M, grid.n))


def em_family(
    drift: Coefficient1D,
    diffusion: Coefficient1D,
    x0: float,
    T: float = 1.0,
    taming: str = "none",
    ell: float = 0.0,
    allow_superlinear: bool = False,
    reference_factor: Optional[int] = 4,
    scheme=None,
    name: str = "em",
) -> SchemeFamily:
    """Euler (or tamed Euler) family with a fine self-reference."""
    from .schemes_bm import EMConfig, em_path

    run = scheme or em_path

    def cfg(n):
        return EMConfig(drift, diffusion, x0, TimeGrid(T, n), taming, ell, allow_superlinear)

    cfg(1).validate()
    return SchemeFamily(
        T,
        brownian_noise,
        lambda g, dW: run(cfg(g.n), dW),
        reference_factor=reference_factor,
        name=name,
        config={"driver": "bm", "drift": drift.name, "diffusion": diffusion.name, "x0": x0, "T": T, "taming": taming, "ell": ell},
        em_config=cfg,
    )


def ou_family(theta: float = 1.0, sigma: float = 1.0, x0: float = 0.0, T: float = 1.0) -> SchemeFamily:
    """EM for ``dX = -theta X dt + sigma dB`` against the exact Gaussian transition.

    The noise carries, per fine step, the Brownian increment and the
    stochastic integral ``int e^{-theta (t_{k+1} - s)} dB(s)``, drawn jointly.
    """
    if not theta > 0:
        raise DomainError("theta must be positive")

    def noise(grid, M, rng):
        h = grid.dt
        c = (1 - math.exp(-theta * h)) / theta
        v = (1 - math.exp(-2 * theta * h)) / (2 * theta)
        z = rng.standard_normal((M, grid.n, 2))
        dB = math.sqrt(h) * z[..., 0]
        rho = c / math.sqrt(h)
        integ = rho * z[..., 0] + math.sqrt(max(v - rho * rho, 0.0)) * z[..., 1]
        return np.stack([dB, integ], axis=-1)

    def scheme(g, d):
        dB = d[..., 0]
        X = np.empty((dB.shape[0], g.n + 1))
        X[:, 0] = x0
        for k in range(g.n):
            X[:, k + 1] = X[:, k] - theta * X[:, k] * g.dt + sigma * dB[:, k]
        return X

    def exact(g, d):
        a = math.exp(-theta * g.dt)
        X = np.empty((d.shape[0], g.n + 1))
        X[:, 0] = x0
        for k in range(g.n):
            X[:, k + 1] = a * X[:, k] + sigma * d[:, k, 1]
        return X

    return SchemeFamily(
        T, noise, scheme, exact, reference_factor=1, name="em-ou",
        config={"driver": "bm", "model": "ou", "theta": theta, "sigma": sigma, "x0": x0, "T": T},
    )


def stable_family(alpha: float, diffusion: Coefficient1D, x0: float = 0.0, T: float = 1.0, reference_factor: int = 4):
    from .stable import StableConfig, sample_stable_increment, stable_em_path

    StableConfig(alpha, TimeGrid(T, 1), diffusion, x0).validate()

    def noise(grid, M, rng):
        return sample_stable_increment(alpha, grid.dt, rng, (M, grid.n))

    return SchemeFamily(
        T,
        noise,
        lambda g, dZ: stable_em_path(StableConfig(alpha, g, diffusion, x0), dZ),
        reference_factor=reference_factor,
        name="em-stable",
        moment_limit=alpha,
        config={"driver": "stable", "alpha": alpha, "diffusion": diffusion.name, "x0": x0, "T": T},
    )


def fbm_family(H: float, drift: Coefficient1D, x0: float = 0.0, T: float = 1.0, reference_factor: int = 4, method="circulant"):
    from .fbm import FbmConfig, fbm_em_path, fbm_sample

    def noise(grid, M, rng):
        return fbm_sample(H, grid, rng, M, method)[0]

    return SchemeFamily(
        T,
        noise,
        lambda g, d: fbm_em_path(FbmConfig(H, g, drift, x0), d),
        reference_factor=reference_factor,
        name="em-fbm",
        config={"driver": "fbm", "H": H, "drift": drift.name, "x0": x0, "T": T, "sampler": method},
    )


@dataclass
class SheFamily:
    """Lattice scheme sampled at ``(T, x)`` for spatial resolutions ``n`` with
    ``m = ceil(time_factor T n^2)`` time steps, unless ``ms`` maps ``n`` to an
    explicit ``m``. Replicates at different ``n`` use independent noise;
    there is no fine reference."""

    T: float
    x: float = 0.5
    drift: object = 0.0
    diffusion: object = 0.0
    u0: Optional[Callable] = None
    time_factor: float = 4.0
    override_cfl: bool = False
    name: str = "gyongy"
    ms: Optional[dict] = None

    @property
    def config(self) -> dict:
        d = {"driver": "she", "T": self.T, "x": self.x, "time_factor": self.time_factor}
        if self.ms:
            d["m"] = {str(k): int(v) for k, v in self.ms.items()}
        return d

    def she_config(self, n: int):
        from .she import SheConfig, _zero

        if self.ms and n in self.ms:
            m = int(self.ms[n])
        else:
            m = math.ceil(self.time_factor * self.T * n * n - 1e-9)
        return SheConfig(self.T, m, n, self.drift, self.diffusion, self.u0 or _zero, self.override_cfl)

    def run(self, ns, M: int, rng: np.random.Generator):
        from .she import she_rollout

        out = {}
        for n in ns:
            cfg = self.she_config(n)
            cfg.validate()
            row = she_rollout(cfg, M, rng)[:, 0]
            out[n] = np.array([np.interp(self.x, cfg.nodes, r) for r in row])[:, None]
        return out, None, max(ns)


# --- estimators -----------------------------------------------------------------------------


def _check_ns(ns) -> list:
    ns = [int(n) for n in ns]
    if not ns or any(n < 1 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
        raise DomainError("n list must be strictly increasing positive integers")
    return ns


def _screen(samples: np.ndarray, n: int):
    """Drop non-finite samples, failing the run above the divergence limit."""
    bad = ~np.isfinite(samples)
    k = int(bad.sum())
    if k == samples.size:
        raise RunFailure(f"every path diverged at n = {n}")
    if k > DIVERGENCE_LIMIT * samples.size:
        raise RunFailure(f"{k} of {samples.size} paths diverged at n = {n} (limit {DIVERGENCE_LIMIT:.0%})")
    return samples[~bad], k


def _root_moment(samples, p):
    """``E[e^p]^{1/p}`` with its delta-method standard error."""
    m = float(np.mean(samples))
    se_m = float(np.std(samples, ddof=1)) / math.sqrt(samples.size) if samples.size > 1 else 0.0
    if m == 0:
        return 0.0, 0.0
    return m ** (1 / p), m ** (1 / p - 1) * se_m / p


def _mean_se(samples):
    se = float(np.std(samples, ddof=1)) / math.sqrt(samples.size) if samples.size > 1 else 0.0
    return float(np.mean(samples)), se


def _collect(block_fn, ns, M, seed, threads, block_size):
    parts = run_blocks(block_fn, M, _as_stream(seed), threads, block_size)
    return {n: np.concatenate([p[n] for p in parts]) for n in ns}


def _finite_rows(X):
    return np.isfinite(X).all(axis=tuple(range(1, X.ndim)))


def strong_error(
    family: SchemeFamily,
    ns: Sequence[int],
    M: int,
    p: float = 2.0,
    mode: str = "sup",
    seed=0,
    threads: Optional[int] = None,
    block_size: int = DEFAULT_BLOCK,
) -> ErrorCurve:
    """``E[err^p]^{1/p}`` per ``n``; ``err`` is the sup over the ``n``-grid nodes
    (``mode="sup"``) or the terminal difference against the coupled reference."""
    ns = _check_ns(ns)
    if mode not in ("sup", "terminal"):
        raise DomainError(f"mode must be 'sup' or 'terminal', got {mode!r}")
    if not p > 0:
        raise DomainError("moment order must be positive")
    if family.moment_limit is not None and p >= family.moment_limit:
        raise DomainError(f"moment order {p} >= {family.moment_limit}: the error moment is infinite")

    def block(b, s, m):
        out, ref, N = family.run(ns, m, s.generator())
        res = {}
        for n in ns:
            X, R = out[n], family.reference_at(ref, n, N)
            with np.errstate(invalid="ignore", over="ignore"):
                d = np.abs(X - R)
                e = d.max(axis=1) if mode == "sup" else d[:, -1]
                e = e**p
            e[~(_finite_rows(X) & _finite_rows(R))] = np.nan
            res[n] = e
        return res

    raw = _collect(block, ns, M, seed, threads, block_size)
    points = []
    for n in ns:
        e, k = _screen(raw[n], n)
        err, se = _root_moment(e, p)
        points.append(ErrorPoint(n, err, se, int(e.size), p, f"strong-{mode}", k))
    return ErrorCurve(points, family.name, _seed_of(seed), {**family.config, "M": M, "p": p, "mode": mode})


def _terminal(X):
    return X[:, -1]


def weak_error(
    family,
    f: Callable,
    ns: Sequence[int],
    M: int,
    reference: Union[None, float, str] = None,
    seed=0,
    functional: Callable = _terminal,
    threads: Optional[int] = None,
    block_size: int = DEFAULT_BLOCK,
) -> ErrorCurve:
    """``|E f(F(X_n)) - E f(F(X))|`` per ``n``.

    With a number as ``reference`` it is the exact value of ``E f(F(X))``.
    With ``reference="finest"`` the largest ``n`` serves as the reference
    (for families whose resolutions are independent, such as the lattice
    field); the curve then covers the other ``n`` and standard errors add in
    quadrature. Otherwise the family's coupled reference path is used and
    the standard error is that of the paired differences.
    """
    ns = _check_ns(ns)
    finest = isinstance(reference, str)
    if finest and (reference != "finest" or len(ns) < 2):
        raise DomainError("reference must be a number, None, or 'finest' with at least two n")

    def block(b, s, m):
        out, ref, N = family.run(ns, m, s.generator())
        res = {}
        for n in ns:
            X = out[n]
            with np.errstate(invalid="ignore", over="ignore"):
                v = np.asarray(f(functional(X)), dtype=float)
                if reference is None:
                    if ref is None:
                        raise DomainError("this family has no reference; pass the exact value")
                    R = family.reference_at(ref, n, N) if isinstance(ref, dict) else ref
                    v = v - np.asarray(f(functional(R)), dtype=float)
                    v[~_finite_rows(R)] = np.nan
            v = np.broadcast_to(v, (X.shape[0],)).copy()
            v[~_finite_rows(X)] = np.nan
            res[n] = v
        return res

    raw = _collect(block, ns, M, seed, threads, block_size)
    points = []
    if finest:
        vN, _ = _screen(raw[ns[-1]], ns[-1])
        ref_mean, ref_se = _mean_se(vN)
    for n in ns[:-1] if finest else ns:
        v, k = _screen(raw[n], n)
        mean, se = _mean_se(v)
        if finest:
            err, se = abs(mean - ref_mean), math.hypot(se, ref_se)
        else:
            err = abs(mean - reference) if reference is not None else abs(mean)
        points.append(ErrorPoint(n, err, se, int(v.size), 1.0, "weak", k))
    cfg = {**getattr(family, "config", {}), "M": M, "reference": reference}
    return ErrorCurve(points, family.name, _seed_of(seed), cfg)


def time_avg_bv_error(
    family: SchemeFamily,
    g: Callable,
    ns: Sequence[int],
    M: int,
    q: float = 1.0,
    seed=0,
    threads: Optional[int] = None,
    block_size: int = DEFAULT_BLOCK,
) -> ErrorCurve:
    """``int_0^T E|g(Y(s)) - g(Y(eta(s)))|^q ds`` for the continuous-time Euler
    interpolant, one uniform ``s`` per path (so each sample is ``T |...|^q``)."""
    from .schemes_bm import em_at

    ns = _check_ns(ns)
    if family.em_config is None:
        raise DomainError("the time-averaged error needs an Euler family")

    def block(b, s, m):
        rng = s.generator()
        res = {}
        for n in ns:
            cfg = family.em_config(n)
            dB = family.noise(cfg.grid, m, rng)
            X = family.scheme(cfg.grid, dB)
            u = rng.uniform(0, family.T, m)
            ok = _finite_rows(X)
            Xs = np.where(ok[:, None], X, 0.0)
            xs, xk = em_at(cfg, Xs, dB, u, rng)
            v = family.T * np.abs(np.asarray(g(xs), dtype=float) - np.asarray(g(xk), dtype=float)) ** q
            v[~ok] = np.nan
            res[n] = v
        return res

    raw = _collect(block, ns, M, seed, threads, block_size)
    points = []
    for n in ns:
        v, k = _screen(raw[n], n)
        mean, se = _mean_se(v)
        points.append(ErrorPoint(n, mean, se, int(v.size), q, "time-averaged-BV", k))
    return ErrorCurve(points, family.name, _seed_of(seed), {**family.config, "M": M, "q": q})


def brownian_bridge_max(values: np.ndarray, grid: TimeGrid, rng: np.random.Generator, sigma: float = 1.0):
    """Exact maximum over ``[0, T]`` of ``sigma B`` given its values at the nodes,
    sampling each interval's bridge maximum."""
    a, b = values[:, :-1], values[:, 1:]
    u = rng.random(a.shape)
    top = 0.5 * (a + b + np.sqrt((b - a) ** 2 - 2 * sigma**2 * grid.dt * np.log1p(-u)))
    return top.max(axis=1)


@dataclass(frozen=True)
class BoundComparison:
    """Measured errors against ``C (log n / n)^{exponent}``."""

    exponent: float
    shape: np.ndarray
    constant: float
    anchored_constant: float
    ratios: np.ndarray

    def consistent(self, errors, stderrs, n_se: float = 2.0) -> bool:
        """The curve decays at least as fast as the shape once the constant is
        pinned at the coarsest point."""
        return bool(np.all(np.asarray(errors) - n_se * np.asarray(stderrs) <= self.anchored_constant * self.shape))


def max_bound_exponent(p: float, alpha: float) -> float:
    return p * alpha / (2 * (p + alpha))


def max_functional_error(
    family: SchemeFamily,
    g: Callable,
    ns: Sequence[int],
    M: int,
    p: float,
    q: float = 1.0,
    alpha: float = 1.0,
    seed=0,
    reference_max: Optional[Callable] = None,
    threads: Optional[int] = None,
    block_size: int = DEFAULT_BLOCK,
):
    """``E|g(max X) - g(max_k X_n(t_k))|^q`` per ``n`` with the bound shape.

    ``max X`` is the maximum of the fine reference over its nodes, or
    ``reference_max(values, fine_grid, rng)`` when supplied (e.g.
    :func:`brownian_bridge_max` for exact Brownian maxima).
    """
    ns = _check_ns(ns)
    if not (p >= 1 and q >= 1 and 0 < alpha <= 1):
        raise DomainError("need p, q >= 1 and alpha in (0, 1]")

    def block(b, s, m):
        rng = s.generator()
        out, ref, N = family.run(ns, m, rng)
        if isinstance(ref, dict):
            raise DomainError("the max functional needs a fine reference")
        ok_ref = _finite_rows(ref)
        R = np.where(ok_ref[:, None], ref, 0.0)
        top = reference_max(R, TimeGrid(family.T, N), rng) if reference_max else R.max(axis=1)
        gref = np.asarray(g(top), dtype=float)
        res = {}
        for n in ns:
            X = out[n]
            with np.errstate(invalid="ignore"):
                v = np.abs(np.asarray(g(X.max(axis=1)), dtype=float) - gref) ** q
            v[~(_finite_rows(X) & ok_ref)] = np.nan
            res[n] = v
        return res

    raw = _collect(block, ns, M, seed, threads, block_size)
    points = []
    for n in ns:
        v, k = _screen(raw[n], n)
        mean, se = _mean_se(v)
        points.append(ErrorPoint(n, mean, se, int(v.size), q, "max-functional", k))
    curve = ErrorCurve(points, family.name, _seed_of(seed), {**family.config, "M": M, "p": p, "q": q, "alpha": alpha})
    r = max_bound_exponent(p, alpha)
    nn = curve.ns.astype(float)
    shape = (np.log(nn) / nn) ** r
    err = curve.errors
    pos = err > 0
    C = float(np.exp(np.mean(np.log(err[pos] / shape[pos])))) if pos.any() else 0.0
    anchor = (err[0] + 2 * curve.stderrs[0]) / shape[0]
    ratios = err / (C * shape) if C > 0 else np.zeros_like(err)
    return curve, BoundComparison(r, shape, C, float(anchor), ratios)


# --- multilevel Monte Carlo -----------------------------------------------------------------


def mlmc_estimate(
    family: SchemeFamily,
    payoff: Callable,
    n0: int,
    levels: int,
    M: Union[int, Sequence[int]],
    seed=0,
    functional: Callable = _terminal,
    fine_check: bool = True,
    threads: Optional[int] = None,
    block_size: int = DEFAULT_BLOCK,
) -> MlmcReport:
    """Telescoping estimator of ``E payoff(F(X))`` on levels ``n_l = n0 2^l``.

    Level ``l > 0`` samples ``P_l - P_{l-1}`` with the coarse path driven by
    summed fine noise. Each level has its own stream. With ``fine_check`` an
    independent plain Monte Carlo estimate on the finest level is added for
    the telescoping check.
    """
    if levels < 1 or n0 < 1:
        raise DomainError("need at least one level and n0 >= 1")
    Ms = [int(M)] * levels if np.isscalar(M) else [int(m) for m in M]
    if len(Ms) != levels:
        raise DomainError("one path count per level is required")
    stream = _as_stream(seed)

    def P(g, dW):
        X = family.scheme(g, dW)
        with np.errstate(invalid="ignore", over="ignore"):
            v = np.asarray(payoff(functional(X)), dtype=float)
        v = np.broadcast_to(v, (X.shape[0],)).copy()
        v[~_finite_rows(X)] = np.nan
        return v

    def level_samples(ell, m_paths, s):
        n = n0 * 2**ell

        def block(b, bs, m):
            rng = bs.generator()
            g = TimeGrid(family.T, n)
            dW = family.noise(g, m, rng)
            fine = P(g, dW)
            if ell == 0:
                return fine
            return fine - P(TimeGrid(family.T, n // 2), coarsen_increments(dW, 2))

        return np.concatenate(run_blocks(block, m_paths, s, threads, block_size))

    out = []
    for ell in range(levels):
        n = n0 * 2**ell
        v, k = _screen(level_samples(ell, Ms[ell], stream.substream(f"mlmc-level-{ell}")), n)
        var = float(np.var(v, ddof=1)) if v.size > 1 else 0.0
        out.append(MlmcLevel(ell, n, float(np.mean(v)), var, int(v.size), k))
    estimate = 0.0
    for lv in out:
        estimate += lv.mean
    se = math.sqrt(sum(lv.variance / lv.M for lv in out))
    fine_mean = fine_se = None
    if fine_check:
        nL = n0 * 2 ** (levels - 1)
        s = stream.substream("mlmc-fine")

        def fblock(b, bs, m):
            g = TimeGrid(family.T, nL)
            return P(g, family.noise(g, m, bs.generator()))

        v, _ = _screen(np.concatenate(run_blocks(fblock, Ms[-1], s, threads, block_size)), nL)
        fine_mean, fine_se = _mean_se(v)
    cfg = {**family.config, "n0": n0, "levels": levels, "M": Ms}
    return MlmcReport(out, estimate, se, fine_mean, fine_se, family.name, _seed_of(seed), cfg)


# --- rate fitting ---------------------------------------------------------------------------


def _ols(u, y):
    A = np.vstack([np.ones_like(u), u]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    if tss == 0:
        r2 = 1.0 if rss <= 1e-24 else -math.inf
    else:
        r2 = 1.0 - rss / tss
    return coef, rss, r2


def fit_rate(curve, model: str = "power", errors=None) -> RateFit:
    """Least squares on ``(log n, log e)`` (power) or ``(log log n, log e)`` (log).

    ``curve`` is an :class:`ErrorCurve` or a sequence of ``n`` with ``errors``
    given separately. ``model="auto"`` fits both and keeps the higher R^2,
    attaching the other fit as ``alternative``.
    """
    if isinstance(curve, ErrorCurve):
        ns, es = curve.ns.astype(float), curve.errors
    else:
        ns, es = np.asarray(curve, dtype=float), np.asarray(errors, dtype=float)
    if ns.size < 3 or ns.size != es.size:
        raise DomainError("rate fitting needs at least three (n, error) pairs")
    if np.any(~(es > 0)) or np.any(~np.isfinite(es)):
        raise DomainError("rate fitting needs positive finite errors")
    if model == "auto":
        a, b = fit_rate(ns, "power", es), fit_rate(ns, "log", es)
        best, other = (b, a) if b.r2 > a.r2 else (a, b)
        return RateFit(best.model, best.C, best.exponent, best.rss, best.r2, other)
    if model == "power":
        if np.any(ns <= 0):
            raise DomainError("power fit needs positive n")
        u = np.log(ns)
    elif model == "log":
        if np.any(ns <= 1):
            raise DomainError("log fit needs n > 1")
        u = np.log(np.log(ns))
    else:
        raise DomainError(f"unknown rate model {model!r}")
    (c0, c1), rss, r2 = _ols(u, np.log(es))
    return RateFit(model, float(math.exp(c0)), float(-c1), rss, r2)
