"""Built-in model presets.

A preset is a default *model block* (the same keys a config file uses)
plus, where the theory gives one, the predicted rate shape for the CLI's
verdict line. User keys in the model block override preset keys.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional


@dataclass(frozen=True)
class Preset:
    name: str
    driver: str
    summary: str
    model: dict = field(default_factory=dict)
    theory: Optional[Callable[[dict], tuple]] = None

    def predicted_rate(self, model: dict, p: float):
        """``(model, exponent)`` for these parameters, or None when the theory
        does not cover them (e.g. a moment order outside its range)."""
        from .core.errors import DomainError

        if self.theory is None:
            return None
        try:
            return self.theory({**model, "p": p})
        except DomainError:
            return None


def _main4(m: dict):
    from .schemes_bm import theoretical_rate_main4

    meta = m["drift"] if isinstance(m.get("drift"), dict) else {}
    p0, p1 = meta.get("p0", 14.0), meta.get("p1", math.inf)
    return "power", theoretical_rate_main4(m.get("p", 2.0), p0, p1, m.get("ell", 2.0), meta.get("gamma", 1.0))


def _main7(m: dict):
    from .fbm import theoretical_rate_main7_L1

    return "power", theoretical_rate_main7_L1(m["H"], 1.0, 0.0)


def _main11(m: dict):
    from .she import theoretical_rate_main11

    # with m proportional to n^2 both terms decay like n^{-r_n}
    return "power", theoretical_rate_main11(1.0, 1.0, 0.1)[1]


_LOG = lambda m: ("log", 1.0)  # noqa: E731

PRESETS = {
    p.name: p
    for p in [
        Preset(
            "le-gall-step",
            "bm",
            "sigma = 1 + 1{x >= 0} (values in [1, 2], bounded 2-variation), b = 0; strong error ~ 1/log n",
            {
                "driver": "bm",
                "drift": "0",
                "diffusion": {"expr": "1 + indicator(0, inf)", "sup_bound": 2.0, "ellipticity_floor": 1.0, "discontinuous": True},
                "x0": 0.0,
                "T": 1.0,
            },
            _LOG,
        ),
        Preset(
            "skew-bm",
            "bm",
            "skew Brownian motion, P(X(1) > 0) = 3/4, via the F_nu transform and driftless Euler; error ~ 1/log n",
            {"driver": "bm", "drift": "0", "diffusion": "1", "skew": [[0.0, 0.5]], "x0": 0.0, "T": 1.0},
            _LOG,
        ),
        Preset(
            "cubic-tamed",
            "bm",
            "b = -x^3, sigma = 1, x0 = 2 with the drift tamed by 1 + n^{-1/2}|x|^2",
            {
                "driver": "bm",
                "drift": {"expr": "-x^3", "growth_exponent": 2.0, "one_sided_lipschitz": 0.0, "p0": 14.0},
                "diffusion": "1",
                "x0": 2.0,
                "T": 1.0,
                "taming": "drift-only",
                "ell": 2.0,
            },
            _main4,
        ),
        Preset(
            "holder-sigma",
            "bm",
            "sigma = sqrt(min(|x|, 1)) + 1/2 (1/2-Hölder), b = -x; error ~ 1/log n at the Hölder boundary",
            {
                "driver": "bm",
                "drift": {"expr": "-x", "growth_exponent": 0.0, "one_sided_lipschitz": 0.0},
                "diffusion": {"expr": "sqrt(min(abs(x), 1)) + 0.5", "sup_bound": 1.5, "ellipticity_floor": 0.25},
                "x0": 0.0,
                "T": 1.0,
            },
            _LOG,
        ),
        Preset(
            "step-drift-fbm",
            "fbm",
            "dX = -sign(x) dt + dB^H with H = 0.3 (bounded, BV step drift)",
            {"driver": "fbm", "H": 0.3, "drift": {"expr": "1 - 2 * indicator(0, inf)", "sup_bound": 1.0, "discontinuous": True}, "x0": 0.0, "T": 1.0},
            _main7,
        ),
        Preset(
            "gyongy-she",
            "she",
            "SHE with drift 1{u < 0} - 1{u >= 0}, sigma = 1 + sin(u)/2, u0 = sin(pi x), observed at x = 1/2",
            {
                "driver": "she",
                "drift": "indicator(u, -inf, 0) - indicator(u, 0, inf)",
                "diffusion": "1 + 0.5 * sin(u)",
                "u0": "sin(pi * x)",
                "x": 0.5,
                "T": 0.25,
                "time_factor": 4.0,
            },
            _main11,
        ),
        Preset(
            "asian-pair",
            "bm",
            "X = Brownian motion with step volatility, Y = int_0^t X ds (Asian-type pair); Y is the output",
            {
                "driver": "bm",
                "drift": "0",
                "diffusion": {"expr": "1 + indicator(0, inf)", "sup_bound": 2.0, "ellipticity_floor": 1.0, "discontinuous": True},
                "x0": 0.0,
                "T": 1.0,
                "system": {"mu": "x", "rho1": "0", "rho2": "0", "y0": 0.0},
            },
            None,
        ),
    ]
}


def list_presets() -> str:
    width = max(len(k) for k in PRESETS)
    return "\n".join(f"{p.name:<{width}}  [{p.driver}]  {p.summary}" for p in PRESETS.values())


def resolve_model(model: dict) -> tuple[dict, Optional[Preset]]:
    """Merge a model block over its preset; returns ``(model, preset or None)``."""
    from .core.errors import DomainError

    name = model.get("preset")
    if name is None:
        return dict(model), None
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; allowed values: {sorted(PRESETS)}")
    preset = PRESETS[name]
    merged = {**preset.model, **{k: v for k, v in model.items() if k != "preset"}}
    merged["preset"] = name
    return merged, preset
