"""Batch experiment runner: ``python -m irregsde run CONFIG``.

A config is a TOML document. Top-level keys describe the experiment, the
``[model]`` table describes the equation. The allowed keys are
:data:`TOP_KEYS` and :data:`MODEL_KEYS`; defaults live on
:class:`ExperimentConfig`, and the README walks through the schema.

Exit status: 0 on success, 2 when the config does not validate (nothing is
simulated), 3 when the run fails (too many diverged paths, a factorization
failure, a diverged single path).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib
import tomli_w

from . import harness
from .core import BVFunction, Coefficient1D, TimeGrid, constant
from .core.errors import DivergedPathError, DomainError, FactorizationError, RunFailure
from .expr import Expression, compile_expr, txu_function
from .presets import list_presets, resolve_model

EXPERIMENTS = ("strong-rate", "weak-rate", "avikainen-verify", "mlmc", "she-rate", "max-functional", "time-avg-bv")
DRIVERS = ("bm", "stable", "fbm", "she")
FORMATS = ("csv", "json", "both")

_COMMON_MODEL = ("driver", "preset", "x0", "T")
MODEL_KEYS = {
    "bm": _COMMON_MODEL + ("drift", "diffusion", "taming", "ell", "allow_superlinear", "reference_factor", "skew", "system"),
    "stable": _COMMON_MODEL + ("alpha", "diffusion", "reference_factor"),
    "fbm": _COMMON_MODEL + ("H", "drift", "sampler", "reference_factor"),
    "she": ("driver", "preset", "T", "drift", "diffusion", "u0", "x", "time_factor"),
}
COEF_KEYS = ("expr", "name", "sup_bound", "ellipticity_floor", "growth_exponent", "one_sided_lipschitz", "discontinuous", "p0", "p1", "gamma")
SYSTEM_KEYS = ("mu", "rho1", "rho2", "y0")
PAYOFF_KINDS = ("indicator-above", "indicator-below", "sign", "staircase")


class ConfigError(DomainError):
    pass


def _unknown(keys, allowed, where):
    extra = sorted(set(keys) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key {extra[0]!r} in {where}; allowed keys: {', '.join(allowed)}")


def _choice(value, allowed, key):
    if value not in allowed:
        raise ConfigError(f"invalid value {value!r} for {key!r}; allowed values: {', '.join(allowed)}")
    return value


@dataclass
class ExperimentConfig:
    experiment: str
    model: dict
    n: Optional[list] = None
    M: int = 10_000
    seed: int = 0
    m: Optional[list] = None
    p: float = 2.0
    q: float = 1.0
    alpha: float = 1.0
    mode: str = "sup"
    rate_model: Optional[str] = None
    payoff: object = None
    reference: object = None
    n0: Optional[int] = None
    levels: int = 4
    output: str = "irregsde-report"
    format: str = "both"
    threads: Optional[int] = None
    block_size: int = harness.DEFAULT_BLOCK
    override_cfl: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a table")
        _unknown(d, TOP_KEYS, "the top level")
        for req in ("experiment", "model"):
            if req not in d:
                raise ConfigError(f"missing required key {req!r}")
        cfg = cls(**{k: v for k, v in d.items()})
        cfg.check()
        return cfg

    def check(self):
        _choice(self.experiment, EXPERIMENTS, "experiment")
        _choice(self.format, FORMATS, "format")
        _choice(self.mode, ("sup", "terminal"), "mode")
        if self.rate_model is not None:
            _choice(self.rate_model, ("power", "log", "auto"), "rate_model")
        if not isinstance(self.model, dict):
            raise ConfigError("[model] must be a table")
        model, _ = resolve_model(self.model)
        driver = _choice(model.get("driver", "bm"), DRIVERS, "driver")
        _unknown(model, MODEL_KEYS[driver], f"[model] (driver {driver!r})")
        for k in ("M", "seed", "levels", "block_size"):
            v = getattr(self, k)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{k!r} must be an integer, got {v!r}")
        if self.M < 2:
            raise ConfigError("M must be at least 2")
        if self.experiment == "mlmc":
            if self.n0 is None and not self.n:
                raise ConfigError("mlmc needs 'n0' (or an 'n' list whose first entry is used)")
        elif not self.n:
            raise ConfigError(f"{self.experiment} needs an 'n' list")
        if self.n is not None:
            if not isinstance(self.n, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in self.n):
                raise ConfigError("'n' must be a list of integers")
            harness._check_ns(self.n)
        if self.m is not None:
            if driver != "she":
                raise ConfigError("'m' (time steps per n) applies to the she driver only")
            if not isinstance(self.m, list) or len(self.m) != len(self.n or []):
                raise ConfigError("'m' must be a list with one entry per n")
        if self.experiment == "she-rate" and driver != "she":
            raise ConfigError("she-rate needs driver = 'she'")
        if driver == "she" and self.experiment not in ("she-rate", "weak-rate"):
            raise ConfigError(f"the she driver supports she-rate and weak-rate, not {self.experiment}")
        if self.experiment == "time-avg-bv" and (driver != "bm" or "skew" in model or "system" in model):
            raise ConfigError("time-avg-bv needs a plain Euler model (driver 'bm' without skew or system)")
        if driver == "stable" and self.experiment in ("strong-rate", "avikainen-verify", "max-functional"):
            if "alpha" not in model:
                raise ConfigError("the stable driver needs 'alpha'")
            a = float(model["alpha"])
            if self.p >= a:
                raise ConfigError(
                    f"moment order p = {self.p} >= alpha = {a}: moments of order p >= alpha are infinite for an alpha-stable driver"
                )
        if isinstance(self.reference, str) and self.reference != "finest":
            raise ConfigError("reference must be a number or 'finest'")
        if self.threads is not None and (not isinstance(self.threads, int) or self.threads < 1):
            raise ConfigError("threads must be a positive integer")
        return self

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            out[f.name] = v
        return out

    def to_toml(self) -> str:
        d = self.to_dict()
        model = d.pop("model")
        return tomli_w.dumps({**d, "model": model})


TOP_KEYS = tuple(f.name for f in fields(ExperimentConfig))


def parse_config(text: str) -> ExperimentConfig:
    try:
        d = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


# --- building models ------------------------------------------------------------------------


def coefficient(spec, name: str) -> Coefficient1D:
    """Number, expression string, or table ``{expr = ..., sup_bound = ..., ...}``."""
    if isinstance(spec, bool):
        raise ConfigError(f"{name}: expected a number, expression or table")
    if isinstance(spec, (int, float)):
        return constant(float(spec), name=f"{name}={spec:g}")
    if isinstance(spec, str):
        spec = {"expr": spec}
    if not isinstance(spec, dict) or "expr" not in spec:
        raise ConfigError(f"{name}: expected a number, expression or table with 'expr'")
    _unknown(spec, COEF_KEYS, f"coefficient {name!r}")
    e = Expression(spec["expr"], ("t", "x"))
    if not e.uses and set(spec) <= {"expr", "name"}:
        # constant expression: bounds are known exactly
        return constant(e(t=0.0, x=0.0), name=spec.get("name", f"{name}={spec['expr']}"))
    kw = {k: spec[k] for k in ("sup_bound", "ellipticity_floor", "growth_exponent", "one_sided_lipschitz") if k in spec}
    meta = {k: spec[k] for k in ("p0", "p1", "gamma") if k in spec}
    return Coefficient1D(
        lambda t, x: e(t=t, x=x),
        discontinuous=bool(spec.get("discontinuous", False)),
        name=spec.get("name", spec["expr"]),
        meta=meta,
        **kw,
    )


def _field_coef(spec, name):
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return float(spec)
    if isinstance(spec, str):
        return txu_function(spec)
    raise ConfigError(f"{name}: expected a number or an expression in t, x, u")


def payoff_function(spec, default: str = "x"):
    """Expression in ``x`` or a jump table; returns ``(callable, BVFunction or None)``."""
    spec = default if spec is None else spec
    if isinstance(spec, str):
        e = compile_expr(spec, ("x",))
        return (lambda v: e(x=v)), None
    if not isinstance(spec, dict):
        raise ConfigError("payoff must be an expression in x or a table with 'kind'")
    _unknown(spec, ("kind", "K", "closed", "locations", "sizes", "constant"), "payoff")
    kind = _choice(spec.get("kind"), PAYOFF_KINDS, "payoff.kind")
    if kind == "indicator-above":
        g = BVFunction.indicator_above(float(spec.get("K", 0.0)), bool(spec.get("closed", False)))
    elif kind == "indicator-below":
        g = BVFunction.indicator_below(float(spec.get("K", 0.0)), bool(spec.get("closed", True)))
    elif kind == "sign":
        g = BVFunction.sign()
    else:
        g = BVFunction.staircase(spec.get("locations", []), spec.get("sizes", []), float(spec.get("constant", 0.0)))
    return g, g


def build_family(cfg: ExperimentConfig):
    """The scheme family for ``cfg.model``; validates every resolution in ``cfg.n``."""
    model, _ = resolve_model(cfg.model)
    driver = model.get("driver", "bm")
    T = float(model.get("T", 1.0))
    x0 = float(model.get("x0", 0.0))
    rf = model.get("reference_factor", 4)
    if driver == "she":
        ms = dict(zip(cfg.n, cfg.m)) if cfg.m else None
        u0 = model.get("u0", 0.0)
        if isinstance(u0, str):
            e = compile_expr(u0, ("x",))
            u0f = lambda x: e(x=x)  # noqa: E731
        else:
            c = float(u0)
            u0f = lambda x: np.full(np.shape(x), c)  # noqa: E731
        fam = harness.SheFamily(
            T,
            float(model.get("x", 0.5)),
            _field_coef(model.get("drift", 0.0), "drift"),
            _field_coef(model.get("diffusion", 0.0), "diffusion"),
            u0f,
            float(model.get("time_factor", 4.0)),
            cfg.override_cfl,
            ms=ms,
        )
        for n in cfg.n:
            fam.she_config(n).validate()
        return fam
    if driver == "stable":
        return harness.stable_family(float(model["alpha"]), coefficient(model.get("diffusion", 1.0), "diffusion"), x0, T, rf)
    if driver == "fbm":
        if "H" not in model:
            raise ConfigError("the fbm driver needs 'H'")
        sampler = _choice(model.get("sampler", "circulant"), ("circulant", "cholesky"), "sampler")
        return harness.fbm_family(float(model["H"]), coefficient(model.get("drift", 0.0), "drift"), x0, T, rf, sampler)

    drift = coefficient(model.get("drift", 0.0), "drift")
    diffusion = coefficient(model.get("diffusion", 1.0), "diffusion")
    if "skew" in model:
        return _skew_family(model, drift, diffusion, x0, T, rf)
    fam = harness.em_family(
        drift,
        diffusion,
        x0,
        T,
        model.get("taming", "none"),
        float(model.get("ell", 0.0)),
        bool(model.get("allow_superlinear", False)),
        rf,
        name="em" if model.get("taming", "none") == "none" else "tamed-em",
    )
    for n in cfg.n or []:
        fam.em_config(n).validate()
    if "system" in model:
        return _system_family(model["system"], fam)
    return fam


def _skew_family(model, drift, diffusion, x0, T, rf):
    from .schemes_bm import SignedAtomMeasure, singular_sde_scheme

    if "system" in model:
        raise ConfigError("'skew' and 'system' cannot be combined")
    if drift.sup_bound != 0:
        raise ConfigError("the local-time equation takes no drift; set drift = 0")
    try:
        nu = SignedAtomMeasure(tuple((float(a), float(w)) for a, w in model["skew"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise ConfigError("'skew' must be a list of [location, weight] pairs") from None
    singular_sde_scheme(diffusion, nu, TimeGrid(T, 1), np.zeros(1), x0)
    return harness.SchemeFamily(
        T,
        harness.brownian_noise,
        lambda g, dB: singular_sde_scheme(diffusion, nu, g, dB, x0),
        reference_factor=rf,
        name="skew-euler",
        config={"driver": "bm", "skew": [list(a) for a in nu.atoms], "diffusion": diffusion.name, "x0": x0, "T": T},
    )


def _system_family(spec, fam):
    """Second component ``dY = mu dt + rho1 dB + rho2 dW``; the family outputs Y."""
    from .schemes_bm import coupled_system_em

    if not isinstance(spec, dict):
        raise ConfigError("'system' must be a table")
    _unknown(spec, SYSTEM_KEYS, "[model.system]")
    parts = {}
    for k in ("mu", "rho1", "rho2"):
        v = spec.get(k, 0.0)
        e = Expression(str(v), ("t", "x", "y"))
        parts[k] = (lambda e: lambda t, x, y: e(t=t, x=x, y=y))(e)
    y0 = float(spec.get("y0", 0.0))

    def noise(grid, M, rng):
        return math.sqrt(grid.dt) * rng.standard_normal((M, grid.n, 2))

    def scheme(g, d):
        return coupled_system_em(fam.em_config(g.n), parts["mu"], parts["rho1"], parts["rho2"], y0, d[..., 0], d[..., 1])[1]

    return harness.SchemeFamily(
        fam.T, noise, scheme, reference_factor=fam.reference_factor, name="em-system",
        config={**fam.config, "system": {k: str(spec.get(k, 0.0)) for k in SYSTEM_KEYS}},
    )


# --- running --------------------------------------------------------------------------------


@dataclass
class Outcome:
    summary: str
    payload: dict
    csv: str
    extra: dict = field(default_factory=dict)


def theory_for(cfg: ExperimentConfig):
    model, preset = resolve_model(cfg.model)
    if preset is not None:
        return preset.predicted_rate(model, cfg.p)
    if model.get("driver") == "stable" and cfg.experiment == "strong-rate":
        from .stable import theoretical_rate_main5

        try:
            rd = theoretical_rate_main5(float(model["alpha"]))
        except DomainError:
            return None
        return rd.model, rd.exponent
    return None


def _verdict(curve, theory, tol=0.1):
    """Power theory: the fitted exponent reaches the predicted one (less
    ``tol``). Log theory: the curve is monotone and the log model explains it
    at least as well as a power law (R^2 within 0.05)."""
    if theory is None:
        return "n/a"
    if np.all(curve.errors <= 2 * curve.stderrs):
        return "unresolved (every error within 2 SE of zero; raise M)"
    kind, r = theory
    if kind == "log":
        lg, pw = harness.fit_rate(curve, "log"), harness.fit_rate(curve, "power")
        ok = curve.is_monotone() and lg.r2 > pw.r2 - 0.05
    else:
        ok = harness.fit_rate(curve, "power").exponent >= r - tol
    return "consistent" if ok else "inconsistent"


def _curve_outcome(cfg, curve, extra=None):
    theory = theory_for(cfg)
    model = cfg.rate_model or ("power" if theory is not None and theory[0] == "power" else "auto")
    fit = harness.fit_rate(curve, model) if len(curve.points) >= 3 else None
    if fit is None:
        fit_txt, verdict = "too few points to fit", "n/a"
    else:
        fit_txt = f"fitted {fit.model} rate {fit.exponent:.3f} (R^2 {fit.r2:.3f})"
        verdict = _verdict(curve, theory)
    theory_txt = "n/a" if theory is None else f"{theory[0]} {theory[1]:.3f}"
    payload = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "curve": curve.to_dict(),
        "fit": fit.to_dict() if fit else None,
        "theory": None if theory is None else {"model": theory[0], "exponent": theory[1]},
        "verdict": verdict,
        **(extra or {}),
    }
    summary = f"{cfg.experiment} [{curve.scheme_id}]: {fit_txt}; theory {theory_txt}; verdict {verdict}"
    return Outcome(summary, payload, curve.to_csv())


def run_experiment(cfg: ExperimentConfig) -> Outcome:
    fam = build_family(cfg)
    kw = dict(seed=cfg.seed, threads=cfg.threads, block_size=cfg.block_size)
    exp = cfg.experiment
    if exp == "strong-rate":
        if isinstance(fam, harness.SheFamily):
            raise ConfigError("strong-rate needs a coupled reference; use she-rate for the lattice field")
        return _curve_outcome(cfg, harness.strong_error(fam, cfg.n, cfg.M, cfg.p, cfg.mode, **kw))
    if exp in ("weak-rate", "she-rate"):
        f, _ = payoff_function(cfg.payoff)
        ref = cfg.reference
        if ref is None and isinstance(fam, harness.SheFamily):
            ref = "finest"
        functional = (lambda X: X[:, 0]) if isinstance(fam, harness.SheFamily) else harness._terminal
        curve = harness.weak_error(fam, f, cfg.n, cfg.M, ref, functional=functional, **kw)
        return _curve_outcome(cfg, curve)
    if exp == "time-avg-bv":
        f, _ = payoff_function(cfg.payoff, "indicator(0, inf)")
        return _curve_outcome(cfg, harness.time_avg_bv_error(fam, f, cfg.n, cfg.M, cfg.q, **kw))
    if exp == "max-functional":
        f, _ = payoff_function(cfg.payoff)
        curve, bound = harness.max_functional_error(fam, f, cfg.n, cfg.M, cfg.p, cfg.q, cfg.alpha, **kw)
        fit = harness.fit_rate(curve, "power") if len(curve.points) >= 3 else None
        ok = bound.consistent(curve.errors, curve.stderrs)
        verdict = "consistent" if ok else "inconsistent"
        fit_txt = f"fitted power rate {fit.exponent:.3f}" if fit else "too few points to fit"
        summary = f"max-functional [{curve.scheme_id}]: {fit_txt}; bound (log n / n)^{bound.exponent:.3f}; verdict {verdict}"
        payload = {
            "experiment": exp,
            "config": cfg.to_dict(),
            "curve": curve.to_dict(),
            "fit": fit.to_dict() if fit else None,
            "bound": {"exponent": bound.exponent, "constant": bound.constant, "anchored_constant": bound.anchored_constant},
            "verdict": verdict,
        }
        return Outcome(summary, payload, curve.to_csv())
    if exp == "mlmc":
        f, _ = payoff_function(cfg.payoff)
        n0 = cfg.n0 if cfg.n0 is not None else cfg.n[0]
        rep = harness.mlmc_estimate(fam, f, n0, cfg.levels, cfg.M, **kw)
        V = rep.variances
        slope = float(-np.polyfit(np.arange(len(V)), np.log2(np.maximum(V, 1e-300)), 1)[0]) if len(V) > 1 else float("nan")
        ok = rep.telescoping_ok()
        verdict = "consistent" if ok else "inconsistent"
        summary = (
            f"mlmc [{rep.scheme_id}]: estimate {rep.estimate:.6g} +- {rep.stderr:.2g}; "
            f"level variance decay 2^-{slope:.2f} per level; telescoping check {verdict}"
        )
        payload = {"experiment": exp, "config": cfg.to_dict(), "report": rep.to_dict(), "variance_slope": slope, "verdict": verdict}
        return Outcome(summary, payload, rep.to_csv())
    if exp == "avikainen-verify":
        return _avikainen(cfg, fam)
    raise ConfigError(f"unknown experiment {exp!r}")  # unreachable after check()


def _avikainen(cfg, fam):
    from .avikainen import avikainen_check
    from .core import EmpiricalCDF

    _, g = payoff_function(cfg.payoff if cfg.payoff is not None else {"kind": "indicator-above", "K": 0.0})
    if g is None:
        raise ConfigError("avikainen-verify needs a jump-table payoff (kind = indicator-above, sign, ...)")
    n = cfg.n[0]
    stream = harness._as_stream(cfg.seed)

    def block(b, s, m):
        out, ref, N = fam.run([n], m, s.generator())
        R = fam.reference_at(ref, n, N)
        return np.stack([out[n][:, -1], R[:, -1]], axis=1)

    from .core import run_blocks

    xy = np.concatenate(run_blocks(block, cfg.M, stream, cfg.threads, cfg.block_size))
    ok = np.all(np.isfinite(xy), axis=1)
    if (~ok).sum() > harness.DIVERGENCE_LIMIT * len(xy):
        raise RunFailure(f"{int((~ok).sum())} of {len(xy)} paths diverged")
    xhat, x = xy[ok, 0], xy[ok, 1]
    rep = avikainen_check(g, x, xhat, cfg.p, cfg.q, cfg.alpha, (EmpiricalCDF(x), None, None))
    verdict = "satisfied" if rep.satisfied else "violated"
    summary = f"avikainen-verify [n={n}]: lhs {rep.lhs:.4g} vs bound {rep.rhs:.4g} (tolerance {rep.tolerance:.2g}); verdict {verdict}"
    d = rep.to_dict()
    keys = [k for k, v in d.items() if not isinstance(v, (dict, list))]
    csv = ",".join(["n"] + keys) + "\n" + ",".join([str(n)] + [repr(d[k]) if isinstance(d[k], float) else str(d[k]) for k in keys]) + "\n"
    return Outcome(summary, {"experiment": cfg.experiment, "config": cfg.to_dict(), "report": d, "verdict": verdict}, csv)


def write_outputs(cfg: ExperimentConfig, out: Outcome) -> list:
    stem = Path(cfg.output)
    if stem.suffix in (".csv", ".json"):
        stem = stem.with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if cfg.format in ("csv", "both"):
        p = stem.with_name(stem.name + ".csv")
        p.write_text(out.csv)
        written.append(p)
    if cfg.format in ("json", "both"):
        p = stem.with_name(stem.name + ".json")
        p.write_text(json.dumps(out.payload, indent=2, default=_json_default))
        written.append(p)
    return written


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# --- entry point ----------------------------------------------------------------------------


def _parser():
    ap = argparse.ArgumentParser(prog="irregsde", description="Convergence-rate experiments for SDEs with irregular coefficients.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a TOML config")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int, help="worker threads (default: $IRREGSDE_THREADS, else 1)")
    run.add_argument("--out", help="output path stem; .csv and/or .json are appended")
    run.add_argument("--format", choices=FORMATS)
    run.add_argument("--override-cfl", action="store_true", help="run lattice schemes that violate m >= 2 T n^2 (with a warning)")
    chk = sub.add_parser("check", help="validate a config and print it in normalized form")
    chk.add_argument("config")
    sub.add_parser("presets", help="list the built-in model presets")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "presets":
        print(list_presets())
        return 0
    try:
        cfg = load_config(args.config)
        if args.command == "check":
            print(cfg.to_toml(), end="")
            return 0
        for k in ("seed", "threads", "format"):
            v = getattr(args, k)
            if v is not None:
                setattr(cfg, k, v)
        if args.out is not None:
            cfg.output = args.out
        if args.override_cfl:
            cfg.override_cfl = True
        cfg.check()
        outcome = run_experiment(cfg)
    except (RunFailure, FactorizationError, DivergedPathError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3
    except DomainError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    for p in write_outputs(cfg, outcome):
        print(f"wrote {p}", file=sys.stderr)
    print(outcome.summary)
    return 0
