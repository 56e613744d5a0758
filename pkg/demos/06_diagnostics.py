"""Regularity diagnostics on a short run.

Weak-L^p quasi-norms, the dimension bounds as functions of s, the
epsilon-regularity scan over parabolic cylinders and the local energy
residual.
"""
import numpy as np

from fracns import TorusGrid
from fracns import diagnostics as dg
from fracns.cli import default_cylinder_ladder
from fracns.fields import smooth_cutoff
from fracns.solver import SolverConfig, make_initial, run

grid = TorusGrid(32)
f = 1.0 / np.maximum(grid.distance(), grid.h)
print("weak L^3 quasi-norm of 1/|x|:", dg.weak_lp_norm(grid, f, 3.0, mask=grid.distance() < grid.L / 4).C,
      "continuum", (4 * np.pi / 3) ** (1 / 3))

for s in (0.76, 0.85, 0.95):
    a, b = dg.dimension_bounds(s)
    print(f"s = {s}: suitable bound {a:.4f}, Leray bound {b:.4f}")

cfg = SolverConfig(s=0.9, n=16, dt=0.01, t_end=0.5, output_dt=0.05, store_pressure=True)
traj = run(cfg, make_initial("random_band", cfg.grid, {"k1": 1, "k2": 3, "energy": 1.0}, seed=1))
radii = default_cylinder_ladder(cfg.grid.L, traj.times[-1], cfg.s)
scan = dg.eps_regularity_scan(traj, 1.0, radii)
eps = dg.calibrated_eps(scan)
print("calibrated eps:", eps, "bad counts:", scan.with_eps(eps).bad_counts)

phi = smooth_cutoff(cfg.grid.distance(), cfg.grid.L / 8, cfg.grid.L / 4)
lei = dg.local_energy_residual(traj, phi)
print(f"local energy residual {lei.residual:.2e} (relative {lei.relative:.2e})")
