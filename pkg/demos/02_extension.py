"""The extension to the upper half space, seen numerically.

Lifts a field to theta*(x, z), checks that the weighted normal derivative
at z = 0 reproduces Lambda^(2 alpha) theta, compares the two routes to the
extension profile, and solves the two barrier problems.

    python demos/02_extension.py
"""

import math
import warnings

import numpy as np

from sqglab import extension as ex
from sqglab.spectral import Grid, forward_transform, fractional_laplacian, random_field, sobolev_seminorm

g = Grid(64)
theta = forward_transform(random_field(g, kmax=8, seed=1))

for alpha in (0.25, 0.4, 0.5):
    cfg = ex.ExtensionConfig(alpha)
    ext = ex.extend(theta, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ex.ExtrapolationWarning)
        lim, info = ex.normal_derivative_limit(ext, cfg, return_info=True)
    ref = fractional_laplacian(theta, alpha)
    err = np.max(np.abs(forward_transform(lim).coefficients - ref.coefficients))
    energy = ex.weighted_dirichlet_energy(ext)
    pred = ex.calibration_closed_form(alpha) * sobolev_seminorm(theta, alpha) ** 2
    print(f"alpha={alpha}: calibration d = {info['calibration']:.8f} "
          f"(closed form {ex.calibration_closed_form(alpha):.8f})")
    print(f"   flux vs Lambda^(2alpha): max coefficient gap {err:.1e}")
    print(f"   Dirichlet energy {energy:.6f} vs d ||Lambda^alpha theta||^2 = {pred:.6f}")

s = np.geomspace(1e-3, 20, 8)
a, _ = ex.extension_multiplier(s, 0.35, "bessel_multiplier")
b, _ = ex.extension_multiplier(s, 0.35, "kernel_quadrature")
print("\nprofile phi(s) at alpha = 0.35, Bessel route vs kernel quadrature")
for si, ai, bi in zip(s, a, b):
    print(f"   s={si:8.3g}  {ai:.12f}  {bi:.12f}")

rep1, _ = ex.barrier_f1(0.0, 32)
rep2, _ = ex.barrier_f2(0.0)
print(f"\nbarrier f1: margin lambda = {rep1.lambda_margin:.6f} (must be positive)")
print(f"barrier f2: decay rate {rep2.beta0_fit:.5f}, expected pi = {math.pi:.5f}")
print(f"weighted strip at b = 0.5: first eigen-rate {ex.strip_decay_rate(0.5):.5f}")
