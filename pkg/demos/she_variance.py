"""Variance of the additive-noise heat equation at the midpoint.

For u_t = u_xx + dW/dtdx on [0, 1] with zero boundary values and zero
initial datum, Var u(t, x) has a series representation. The lattice
scheme has its own exact variance (a finite sum over lattice modes); the
gap between the two is the discretization bias, and Monte Carlo estimates
scatter around the lattice value.

    python demos/she_variance.py
"""
import math

import numpy as np

from irregsde.core import RngStream
from irregsde.she import SheConfig, continuum_variance, discrete_variance, she_ensemble

T, M = 0.1, 10_000
print(f"series value Var u({T}, 1/2) = {continuum_variance(T, 0.5):.5f}")
for n in [8, 16, 32]:
    cfg = SheConfig(T, math.ceil(4 * T * n * n), n, diffusion=1.0)
    vals = she_ensemble(cfg, M, RngStream(5, n), rows=[cfg.m])[:, 0, n // 2]
    v = float(np.var(vals, ddof=1))
    print(
        f"n = {n:2d}, m = {cfg.m:4d}: lattice {discrete_variance(cfg, n // 2):.5f}, "
        f"Monte Carlo {v:.5f} +- {v * math.sqrt(2 / (M - 1)):.5f}"
    )
