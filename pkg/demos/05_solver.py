"""Time stepping the hypodissipative equations.

The exponential integrators treat the fractional dissipation exactly and the
nonlinearity to second (ETDRK2, the default) or fourth (ETDRK4) order. The
energy identity ||u(t)||^2 + dissipation = ||u(0)||^2 holds up to
time-stepping error, and halving dt shows the convergence rate.
"""
import numpy as np

from fracns.solver import SolverConfig, make_initial, run

cfg = SolverConfig(s=0.85, n=16, dt=0.01, t_end=0.5, output_dt=0.1)
u0 = make_initial("random_band", cfg.grid, {"k1": 1, "k2": 4, "energy": 1.0}, seed=5)
traj = run(cfg, u0)
for t, e, d in zip(traj.times, traj.energy, traj.dissipation):
    print(f"t = {t:.2f}  energy {e:.6f}  energy + dissipation {e + d:.8f}")

for scheme in ("etdrk2", "etdrk4"):
    ref = run(SolverConfig(s=0.85, n=16, dt=0.00125, t_end=0.5, integrator=scheme), u0).frames[-1]
    errors = []
    for dt in (0.04, 0.02, 0.01):
        u = run(SolverConfig(s=0.85, n=16, dt=dt, t_end=0.5, integrator=scheme), u0).frames[-1]
        errors.append(np.max(np.abs(u - ref)))
    print(scheme, "errors", np.array(errors), "observed orders", np.log2(np.array(errors[:-1]) / np.array(errors[1:])))
