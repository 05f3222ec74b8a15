"""A tour of measured strong rates.

Runs the Euler scheme on four models and prints the fitted power-law and
log-law rates side by side. Smooth coefficients give clean power laws;
a jump in the diffusion coefficient gives a curve a log law describes as
well as any power. Takes about half a minute.

    python demos/rates_tour.py
"""
import numpy as np

from irregsde.core import RngStream, constant, from_x
from irregsde.harness import em_family, fit_rate, ou_family, strong_error

NS = [16, 32, 64, 128, 256, 512]
M = 4000

models = {
    "OU, exact reference": ou_family(1.0, 1.0, 1.0),
    "dX = X dB": em_family(constant(0.0), from_x(lambda x: x, growth_exponent=0.0), 1.0),
    "sigma = 1 + 1{x >= 0}": em_family(
        constant(0.0), from_x(lambda x: 1.0 + (x >= 0), sup_bound=2.0, ellipticity_floor=1.0, discontinuous=True), 0.0
    ),
    "tamed b = -x^3": em_family(
        from_x(lambda x: -(x**3), growth_exponent=2.0), constant(1.0), 2.0, taming="drift-only", ell=2.0
    ),
}

print(f"{'model':<24} {'power rate':>10} {'R^2':>7} {'log rate':>9} {'R^2':>7}")
for i, (name, fam) in enumerate(models.items()):
    curve = strong_error(fam, NS, M, 2.0, seed=RngStream(11, i))
    pw, lg = fit_rate(curve, "power"), fit_rate(curve, "log")
    print(f"{name:<24} {pw.exponent:10.3f} {pw.r2:7.4f} {lg.exponent:9.3f} {lg.r2:7.4f}")
    print("    errors:", np.array2string(curve.errors, precision=4))
