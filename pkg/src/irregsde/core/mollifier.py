"""Yamada–Watanabe type approximations of ``|x|``.

``psi`` is a bump supported on ``[eps/delta, eps]``: in the variable
``u = log z`` it is a trapezoid (zero at both ends, one on the middle half
of the log-range) divided by ``z`` and normalized to unit mass. In log
coordinates the trapezoid has mass ``3/4 log(delta)``, which gives
``psi(z) <= 4 / (3 z log(delta)) < 2 / (z log(delta))``.

``phi(x) = int_0^|x| int_0^y psi(z) dz dy`` is evaluated in closed form:
the inner integral is piecewise quadratic in ``u`` and
``int (c0 + c1 v + c2 v^2) e^v dv`` has an elementary antiderivative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def _poly_exp_antideriv(c0, c1, c2, v):
    # d/dv [e^v (c0 + c1 (v - 1) + c2 (v^2 - 2 v + 2))] = e^v (c0 + c1 v + c2 v^2)
    return np.exp(v) * (c0 + c1 * (v - 1.0) + c2 * (v * v - 2.0 * v + 2.0))


@dataclass(frozen=True)
class Mollifier:
    delta: float
    eps: float

    @property
    def lower(self) -> float:
        return self.eps / self.delta

    @property
    def _w(self) -> float:
        return math.log(self.delta) / 4.0

    @property
    def _mass(self) -> float:
        return 3.0 * self._w

    def _pieces(self):
        """Coefficients ``(c0, c1, c2)`` of ``R(v)`` on the ramp, plateau and ramp."""
        w = self._w
        return [
            (0.0, w, (0.0, 0.0, 1.0 / (2.0 * w))),
            (w, 3.0 * w, (-w / 2.0, 1.0, 0.0)),
            # w/2 + 2w + (v - 3w) - (v - 3w)^2 / (2w), expanded in v
            (3.0 * w, 4.0 * w, (-5.0 * w, 4.0, -1.0 / (2.0 * w))),
        ]

    def _rho(self, v):
        w = self._w
        return np.clip(np.minimum(v / w, (4.0 * w - v) / w), 0.0, 1.0) * ((v > 0) & (v < 4 * w))

    def _cum(self, v):
        """``R(v) = int_0^v rho``; ``Psi = R / mass``."""
        w = self._w
        v = np.clip(v, 0.0, 4.0 * w)
        out = np.zeros_like(v)
        for lo, hi, (c0, c1, c2) in self._pieces():
            m = (v >= lo) & (v <= hi)
            out = np.where(m, c0 + c1 * v + c2 * v * v, out)
        return out

    def psi(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.log(np.where(z > 0, z, 1.0)) - math.log(self.lower)
            out = np.where(z > 0, self._rho(v) / (np.where(z > 0, z, 1.0) * self._mass), 0.0)
        return out

    def Psi(self, y):
        """``int_0^y psi``, for ``y >= 0``."""
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            v = np.log(np.where(y > 0, y, self.lower)) - math.log(self.lower)
        return np.where(y > self.lower, self._cum(v) / self._mass, 0.0)

    def _phi_abs(self, r):
        """``int_0^r Psi(y) dy`` for ``r >= 0``."""
        r = np.asarray(r, dtype=float)
        a = self.lower
        vmax = 4.0 * self._w
        with np.errstate(divide="ignore"):
            v = np.clip(np.log(np.where(r > a, r, a)) - math.log(a), 0.0, vmax)
        total = np.zeros_like(v)
        for lo, hi, (c0, c1, c2) in self._pieces():
            upper = np.clip(v, lo, hi)
            seg = _poly_exp_antideriv(c0, c1, c2, upper) - _poly_exp_antideriv(c0, c1, c2, lo)
            total = total + np.where(v > lo, seg, 0.0)
        total = a * total / self._mass
        # beyond eps the inner integral is exactly one
        return total + np.maximum(r - self.eps, 0.0)

    def phi(self, x):
        return self._phi_abs(np.abs(np.asarray(x, dtype=float)))

    def dphi(self, x):
        x = np.asarray(x, dtype=float)
        return np.sign(x) * self.Psi(np.abs(x))

    def d2phi(self, x):
        return self.psi(np.abs(np.asarray(x, dtype=float)))

    def max_bound_ratio(self, num: int = 20001) -> float:
        """``max z psi(z) log(delta) / 2`` on a log grid of the support; must be <= 1."""
        z = np.geomspace(self.lower, self.eps, num)
        return float(np.max(z * self.psi(z) * math.log(self.delta) / 2.0))


def build_mollifier(delta: float, eps: float) -> Mollifier:
    if not delta > 1:
        raise DomainError(f"delta must exceed 1, got {delta}")
    if not 0 < eps < 1:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    m = Mollifier(float(delta), float(eps))
    ratio = m.max_bound_ratio()
    if ratio > 1.0 + 1e-12:
        raise DomainError(f"psi violates the 2/(z log delta) bound (ratio {ratio:.4g})")
    return m
