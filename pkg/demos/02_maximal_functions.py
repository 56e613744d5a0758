"""Maximal functions of a localized bump.

The Hardy-Littlewood maximal function dominates the function itself and
decays like |x|**-3 away from the support. The smooth and nontangential
variants built from a Gaussian profile are compared along a ray.
"""
import numpy as np

from fracns import TorusGrid
from fracns.maximal import gaussian_profile, hardy_littlewood_max, nontangential_max, smooth_max

grid = TorusGrid(32)
r = grid.distance()
f = np.exp(-(r / 0.3) ** 2)

M = hardy_littlewood_max(grid, f)
print("M f >= |f| everywhere:", bool(np.all(M >= np.abs(f) - 1e-12)))

psi = gaussian_profile()
Ms = smooth_max(grid, f, psi)
Mn = nontangential_max(grid, f, psi)
print("smooth <= nontangential:", bool(np.all(Ms <= Mn + 1e-12)))

c = grid.n // 2
print("  r      |f|       M f      M_psi f   M*_psi f")
for i in range(c, c + grid.n // 4, 2):
    print(f"{r[i, c, c]:5.2f}  {f[i, c, c]:.2e}  {M[i, c, c]:.2e}  {Ms[i, c, c]:.2e}  {Mn[i, c, c]:.2e}")
