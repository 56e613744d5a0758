"""Extension to the upper half space and recovery of the fractional Laplacian.

The extension of f solves a degenerate elliptic equation in (x, y) with weight
y**(1 - 2s). Its weighted Dirichlet energy equals a constant times the
homogeneous H**s seminorm, and the weighted normal derivative at y = 0
recovers (-Delta)**s f.
"""
import numpy as np

from fracns import TorusGrid
from fracns.extension import extend, graded_levels, recover_frac_laplacian, weighted_energy
from fracns.fields import random_trig_polynomial
from fracns.spectral import fractional_laplacian, lp_norm

grid = TorusGrid(32)
s = 0.85
f = random_trig_polynomial(grid, np.random.default_rng(3), kmax=5)
ext = extend(grid, f, s, graded_levels(grid.L, 64))

seminorm = lp_norm(grid, fractional_laplacian(grid, f, s), 2) ** 2
print("weighted energy / ||Lambda^s f||^2 =", weighted_energy(ext) / seminorm)

rec = recover_frac_laplacian(ext)
exact = fractional_laplacian(grid, f, 2 * s)
print("recovery relative error:", lp_norm(grid, rec - exact, 2) / lp_norm(grid, exact, 2))

# the extension is smooth and decays in y
for k in (0, 16, 32, 48, 63):
    print(f"y = {ext.y_levels[k]:.3e}: max |u*| = {np.max(np.abs(ext.values[k])):.3e}")
