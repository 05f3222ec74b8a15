"""Weak bias of the skew Brownian motion scheme.

Skew Brownian motion with parameter 3/4 satisfies P(X(1) > 0) = 3/4. The
scheme maps X to Y = F_nu(X), runs driftless Euler on Y and maps back. Y has
a diffusion coefficient with a jump at 0, and Euler's weak error for such
coefficients decays only like n^{-1/2}. The script shows the bias shrinking
with n while staying visible at the path counts used elsewhere.

    python demos/skew_bias.py
"""
import math

import numpy as np

from irregsde.core import RngStream, TimeGrid, constant, run_blocks
from irregsde.schemes_bm import SignedAtomMeasure, singular_sde_scheme

nu = SignedAtomMeasure.skew(0.75)
M = 100_000
for i, n in enumerate([16, 64, 256, 1024]):
    grid = TimeGrid(1.0, n)

    def block(b, s, m):
        dB = math.sqrt(grid.dt) * s.generator().standard_normal((m, n))
        return singular_sde_scheme(constant(1.0), nu, grid, dB)[:, -1] > 0

    hits = np.concatenate(run_blocks(block, M, RngStream(3, i))).astype(float)
    p, se = hits.mean(), hits.std(ddof=1) / math.sqrt(M)
    print(f"n = {n:5d}: P(X(1) > 0) = {p:.4f} +- {se:.4f}   bias {p - 0.75:+.4f}   bias * sqrt(n) {(p - 0.75) * math.sqrt(n):+.3f}")
