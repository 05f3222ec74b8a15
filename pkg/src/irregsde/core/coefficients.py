from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Coefficient1D:
    """A drift or diffusion coefficient ``(t, x) -> real`` with declared bounds.

    ``fn`` must accept numpy arrays and broadcast. The optional fields are
    structural promises used by validation and by rate formulas; they are
    not inferred from ``fn``.

    Parameters
    ----------
    fn : callable
        Vectorized evaluator ``fn(t, x)``.
    sup_bound : float, optional
        Claimed bound on ``|fn|``.
    ellipticity_floor : float, optional
        Claimed lower bound on ``fn(t, x)**2``.
    growth_exponent : float, optional
        ``l`` in ``|fn(x)| <= K (1 + |x|^(l+1))``; 0 means linear growth.
    one_sided_lipschitz : float, optional
        ``K`` in ``(x - y)(fn(x) - fn(y)) <= K |x - y|^2``.
    discontinuous : bool
        Marks coefficients with jumps; a discontinuous diffusion without an
        ellipticity floor is rejected by scheme validation.
    breakpoints : tuple of float
        Known jump locations, handed to quadrature.
    meta : dict
        Free-form metadata (e.g. ``p0``, ``p1``, ``K``, ``gamma``).
    """

    fn: Callable
    sup_bound: Optional[float] = None
    ellipticity_floor: Optional[float] = None
    growth_exponent: Optional[float] = None
    one_sided_lipschitz: Optional[float] = None
    discontinuous: bool = False
    breakpoints: tuple = ()
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __call__(self, t, x):
        return self.fn(t, x)

    def eval(self, t, x):
        return self.fn(t, x)

    def validate(self, xs=None, ts=(0.0,), diffusion=False):
        """Check declared bounds on a sample of arguments.

        Raises :class:`DomainError` on the first violated claim.
        """
        if xs is None:
            xs = np.linspace(-10.0, 10.0, 2001)
        xs = np.asarray(xs, dtype=float)
        for t in ts:
            v = np.broadcast_to(np.asarray(self.fn(t, xs), dtype=float), xs.shape)
            if self.sup_bound is not None and np.any(np.abs(v) > self.sup_bound * (1 + 1e-12)):
                raise DomainError(f"{self.name or 'coefficient'} exceeds declared sup bound {self.sup_bound}")
            if self.ellipticity_floor is not None and np.any(v**2 < self.ellipticity_floor * (1 - 1e-12)):
                raise DomainError(
                    f"{self.name or 'coefficient'} violates declared ellipticity floor {self.ellipticity_floor}"
                )
        if diffusion and self.discontinuous and not self.ellipticity_floor:
            raise DomainError(
                "discontinuous diffusion coefficient without a positive ellipticity floor "
                "(e.g. Tanaka's sign coefficient admits no strong solution)"
            )
        return True


def constant(c: float, **kw) -> Coefficient1D:
    c = float(c)
    kw.setdefault("sup_bound", abs(c))
    if c != 0:
        kw.setdefault("ellipticity_floor", c * c)
    kw.setdefault("growth_exponent", 0.0)
    kw.setdefault("name", f"const({c:g})")
    return Coefficient1D(lambda t, x: np.full(np.shape(x), c) if np.ndim(x) else c, **kw)


def from_x(f: Callable, **kw) -> Coefficient1D:
    """Wrap a time-independent ``f(x)``."""
    return Coefficient1D(lambda t, x: f(x), **kw)
