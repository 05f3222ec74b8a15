from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Jump:
    location: float
    size: float
    closure: str = "right"  # "left": the jump is already counted at its location


@dataclass(frozen=True)
class BVFunction:
    """Pure-jump function of bounded variation.

    ``g(x) = c + sum(size for z < x) + sum(size for z == x with closure 'left')``.
    A jump with ``closure='right'`` switches on strictly after its location
    (``1_{(z, inf)}``); ``closure='left'`` switches on at it (``1_{[z, inf)}``).
    """

    constant: float = 0.0
    jumps: tuple = ()

    def __post_init__(self):
        jumps = tuple(j if isinstance(j, Jump) else Jump(*j) for j in self.jumps)
        locs = [j.location for j in jumps]
        if any(b <= a for a, b in zip(locs, locs[1:])):
            raise DomainError("jump locations must be strictly increasing")
        for j in jumps:
            if j.closure not in ("left", "right"):
                raise DomainError(f"closure must be 'left' or 'right', got {j.closure!r}")
            if not np.isfinite(j.size) or not np.isfinite(j.location):
                raise DomainError("jump location and size must be finite")
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "constant", float(self.constant))

    @property
    def total_variation(self) -> float:
        return bv_total_variation(self)

    def __call__(self, x):
        return bv_eval(self, x)

    # common payoffs ---------------------------------------------------
    @classmethod
    def indicator_above(cls, K: float, closed: bool = False) -> "BVFunction":
        """``1_{(K, inf)}``, or ``1_{[K, inf)}`` when ``closed``."""
        return cls(0.0, (Jump(K, 1.0, "left" if closed else "right"),))

    @classmethod
    def indicator_below(cls, K: float, closed: bool = True) -> "BVFunction":
        """``1_{(-inf, K]}``, or ``1_{(-inf, K)}`` when not ``closed``."""
        return cls(1.0, (Jump(K, -1.0, "right" if closed else "left"),))

    @classmethod
    def sign(cls) -> "BVFunction":
        """``sgn(x) = -1_{(-inf, 0]} + 1_{(0, inf)}``."""
        return cls(-1.0, (Jump(0.0, 2.0, "right"),))

    @classmethod
    def staircase(cls, locations, sizes, constant=0.0, closure="right") -> "BVFunction":
        return cls(constant, tuple(Jump(z, s, closure) for z, s in zip(locations, sizes)))


def bv_total_variation(g: BVFunction) -> float:
    return float(sum(abs(j.size) for j in g.jumps))


def bv_eval(g: BVFunction, x):
    x_arr = np.asarray(x, dtype=float)
    out = np.full(x_arr.shape, g.constant)
    for j in g.jumps:
        if j.closure == "left":
            out = out + j.size * (x_arr >= j.location)
        else:
            out = out + j.size * (x_arr > j.location)
    if np.ndim(x) == 0:
        return float(out)
    return out
