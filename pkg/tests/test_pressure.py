import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracns.fields import erf_cutoff, gaussian_envelope, localized_velocity
from fracns.maximal import hermite_gaussian_family
from fracns.pressure import (
    DivergenceError,
    default_cutoffs,
    decay_check,
    localize_pressure,
    poincare_balls,
    poincare_pressure_ratio,
    pressure_cz_ratio,
    pressure_hardy_ratio,
    psi_weight,
    riesz_power,
    solve_pressure,
)
from fracns.spectral import TorusGrid, divergence, gradient


def taylor_green(grid):
    x1, x2, _ = np.broadcast_arrays(*grid.coords)
    return np.stack([np.cos(x1) * np.sin(x2), -np.sin(x1) * np.cos(x2), 0 * x1])


@pytest.fixture(scope="module")
def grid():
    return TorusGrid(32)


class TestSolvePressure:
    def test_taylor_green(self, grid):
        x1, x2, _ = np.broadcast_arrays(*grid.coords)
        pair = solve_pressure(grid, taylor_green(grid))
        assert np.max(np.abs(pair.p + (np.cos(2 * x1) + np.cos(2 * x2)) / 4)) < 1e-10
        assert pair.residual < 1e-10

    def test_taylor_green_double_resolution(self):
        # the n=64 solve sampled back on n=32 must agree with the n=32 solve
        lo, hi = TorusGrid(32), TorusGrid(64)
        p_lo = solve_pressure(lo, taylor_green(lo)).p
        p_hi = solve_pressure(hi, taylor_green(hi)).p
        assert np.max(np.abs(p_hi[::2, ::2, ::2] - p_lo)) < 1e-12

    def test_shear_flow(self, grid):
        x2 = np.broadcast_to(grid.coords[1], grid.shape)
        u = np.stack([np.sin(x2), 0 * x2, 0 * x2])
        assert np.max(np.abs(solve_pressure(grid, u).p)) < 1e-12

    @pytest.mark.parametrize("lam", [0.5, 2.0, -3.0])
    def test_quadratic_homogeneity(self, grid, lam):
        u = localized_velocity(grid, np.random.default_rng(0))
        p1 = solve_pressure(grid, u).p
        p2 = solve_pressure(grid, lam * u).p
        assert np.allclose(p2, lam**2 * p1, atol=1e-12 * np.max(np.abs(p2)))

    def test_mean_zero_and_gradient(self, grid):
        u = localized_velocity(grid, np.random.default_rng(1))
        pair = solve_pressure(grid, u)
        assert abs(pair.p.mean()) < 1e-14 * np.max(np.abs(pair.p))
        assert np.allclose(pair.gradient, gradient(grid, pair.p))
        assert pair.residual < 1e-10

    def test_rejects_compressible(self, grid):
        x1 = np.broadcast_to(grid.coords[0], grid.shape)
        u = np.stack([np.sin(x1), 0 * x1, 0 * x1])
        assert np.max(np.abs(divergence(grid, u))) > 0.5
        with pytest.raises(DivergenceError):
            solve_pressure(grid, u)

    def test_zero_velocity(self, grid):
        pair = solve_pressure(grid, np.zeros((3,) + grid.shape))
        assert np.all(pair.p == 0) and pair.residual == 0


class TestHardyRatio:
    def test_zero(self, grid):
        assert pressure_hardy_ratio(grid, np.zeros((3,) + grid.shape), 1, 0.8) == 0.0

    @pytest.mark.parametrize("n", [0, 1, 2])
    def test_invariant_under_scaling(self, grid, n):
        u = localized_velocity(grid, np.random.default_rng(2))
        assert pressure_hardy_ratio(grid, 2 * u, n, 0.8) == pytest.approx(pressure_hardy_ratio(grid, u, n, 0.8), rel=1e-12)

    def test_riesz_power_shape(self, grid):
        f = gaussian_envelope(grid, 0.5)
        assert riesz_power(grid, f, 0).shape == grid.shape
        assert riesz_power(grid, f, 2).shape == (3, 3) + grid.shape
        with pytest.raises(ValueError):
            riesz_power(grid, f, -1)

    def test_riesz_contraction(self, grid):
        # sum_j R_j R_j = -Id on mean-zero fields in this sign convention
        f = gaussian_envelope(grid, 0.5)
        f -= f.mean()
        R2 = riesz_power(grid, f, 2)
        assert np.allclose(R2[0, 0] + R2[1, 1] + R2[2, 2], -f, atol=1e-10)

    def test_ensemble_resolution_stable(self):
        out = {}
        for n in (32, 64):
            g = TorusGrid(n)
            fields = [localized_velocity(g, np.random.default_rng(100 + k)) for k in range(20)]
            out[n] = np.array([[pressure_hardy_ratio(g, u, m, 0.8) for m in (0, 1, 2)] for u in fields])
        for m in range(3):
            assert np.all(np.isfinite(out[64][:, m]))
            ratio = out[64][:, m].max() / out[32][:, m].max()
            assert 0.5 <= ratio <= 2.0
            assert out[64][:, m].max() / out[64][:, m].min() < 10

    def test_translation_invariance(self, grid):
        u = localized_velocity(grid, np.random.default_rng(3))
        shifted = np.roll(u, (3, -5, 2), axis=(1, 2, 3))
        assert pressure_hardy_ratio(grid, shifted, 1, 0.8) == pytest.approx(pressure_hardy_ratio(grid, u, 1, 0.8), rel=1e-10)

    def test_calderon_zygmund(self):
        vals = []
        for n in (32, 64):
            g = TorusGrid(n)
            vals.append(max(pressure_cz_ratio(g, localized_velocity(g, np.random.default_rng(k))) for k in range(5)))
        assert 0 < vals[0] < 1 and abs(vals[1] / vals[0] - 1) < 0.05


class TestDecay:
    def test_zero(self, grid):
        assert decay_check(grid, np.zeros(grid.shape), 0.8, 0, 0.8) == 0.0

    def test_rejects_far_probe(self, grid):
        with pytest.raises(ValueError):
            decay_check(grid, np.ones(grid.shape), 0.8, 0, 0.8, radii=[0.0, grid.L / 2])

    @pytest.mark.parametrize("eta", [0.0, 1.6, 2.0])
    def test_eta_range(self, grid, eta):
        with pytest.raises(ValueError):
            decay_check(grid, np.ones(grid.shape), 0.8, 0, eta)

    def test_monotone_in_eta(self, grid):
        g = gaussian_envelope(grid, 0.4)
        vals = [decay_check(grid, g, 0.8, 1, eta) for eta in (0.2, 0.8, 1.4)]
        assert vals[0] <= vals[1] <= vals[2]

    @pytest.mark.parametrize("n_riesz", [0, 1])
    def test_box_doubling(self, n_riesz):
        # same continuum bump and spacing, cell side doubled
        small, big = TorusGrid(32), TorusGrid(64, 4 * np.pi)
        a = decay_check(small, gaussian_envelope(small, 0.4), 0.8, n_riesz, 0.8)
        b = decay_check(big, gaussian_envelope(big, 0.4), 0.8, n_riesz, 0.8)
        assert 0.5 <= b / a <= 2.0


class TestLocalize:
    def test_phi_zero(self, grid):
        u = taylor_green(grid)
        p = solve_pressure(grid, u).p
        _, phibar = default_cutoffs(grid)
        out = localize_pressure(grid, p, u, np.zeros(grid.shape), phibar)
        assert np.all(out.riesz_part == 0) and np.all(out.remainder == 0)

    def test_nesting_violated(self, grid):
        u = taylor_green(grid)
        p = solve_pressure(grid, u).p
        phi, phibar = default_cutoffs(grid)
        with pytest.raises(ValueError):
            localize_pressure(grid, p, u, phibar, phi)

    def test_defaults_nested(self, grid):
        phi, phibar = default_cutoffs(grid)
        assert np.all(np.abs(phibar[phi != 0] - 1) < 1e-12)
        assert np.all(phibar[grid.distance() >= grid.L / 4.2] == 0)

    def test_reconstruction_converges(self):
        errs = []
        for n in (32, 64):
            g = TorusGrid(n)
            u = taylor_green(g)
            phi, phibar = default_cutoffs(g)
            errs.append(localize_pressure(g, solve_pressure(g, u).p, u, phi, phibar).reconstruction_error)
        assert errs[1] < errs[0] / 3

    @pytest.mark.slow
    def test_reconstruction_resolved(self):
        # Gaussian-spectrum cutoffs on n=128: the identity holds to the truncation level of the cutoffs
        g = TorusGrid(128)
        d = g.distance()
        u = taylor_green(g)
        phi = erf_cutoff(d, 0.3, 0.03)
        phi[phi < 1e-10] = 0.0
        phibar = erf_cutoff(d, 0.95, 0.12)
        out = localize_pressure(g, solve_pressure(g, u).p, u, phi, phibar, nest_tol=1e-9)
        assert out.reconstruction_error < 1e-6

    def test_shear_flow_riesz_cancels_remainder(self):
        g = TorusGrid(128)
        x2 = np.broadcast_to(g.coords[1], g.shape)
        u = np.stack([np.sin(x2), 0 * x2, 0 * x2])
        d = g.distance()
        phi = erf_cutoff(d, 0.3, 0.03)
        phi[phi < 1e-10] = 0.0
        phibar = erf_cutoff(d, 0.95, 0.12)
        out = localize_pressure(g, np.zeros(g.shape), u, phi, phibar, nest_tol=1e-9)
        scale = np.max(np.abs(out.riesz_part))
        assert scale > 1e-3
        assert np.max(np.abs(out.riesz_part + out.remainder)) < 1e-6 * scale

    @pytest.mark.slow
    def test_bound_constants_stable(self):
        # the k=2 constant needs the cutoff's second derivatives resolved, hence n >= 64
        consts = []
        for n in (64, 128):
            g = TorusGrid(n)
            u = taylor_green(g)
            phi, phibar = default_cutoffs(g)
            out = localize_pressure(g, solve_pressure(g, u).p, u, phi, phibar)
            assert len(out.bound_constants) == 3
            assert np.all(np.diff(out.remainder_norms) >= 0)
            consts.append(np.array(out.bound_constants))
        assert np.all(np.isfinite(consts[1]))
        assert np.all(np.abs(consts[1] / consts[0] - 1) < 0.5)


class TestPoincare:
    def test_balls_fit(self, grid):
        b = poincare_balls(grid)
        assert b["psi"] < b["oscillation"] < b["maximal"] < b["outer"] < grid.L / 4

    def test_psi_mass(self, grid):
        w = psi_weight(grid, poincare_balls(grid)["psi"])
        assert w.sum() * grid.cell_volume == pytest.approx(1.0)
        assert np.all(w[grid.distance() >= poincare_balls(grid)["psi"]] == 0)

    def test_constant(self, grid):
        g = np.stack([np.full(grid.shape, c) for c in (1.0, -2.0, 0.5)])
        assert poincare_pressure_ratio(grid, g, 0.8) == 0.0

    def test_homogeneous(self, grid):
        u = localized_velocity(grid, np.random.default_rng(4))
        gp = solve_pressure(grid, u).gradient
        assert poincare_pressure_ratio(grid, 2 * gp, 0.8) == pytest.approx(poincare_pressure_ratio(grid, gp, 0.8), rel=1e-12)

    def test_ensemble(self):
        fam = hermite_gaussian_family()
        g32 = TorusGrid(32)
        r32 = [poincare_pressure_ratio(g32, solve_pressure(g32, localized_velocity(g32, np.random.default_rng(k))).gradient, 0.8, fam)
               for k in range(20)]
        assert np.all(np.isfinite(r32)) and max(r32) < 1
        g64 = TorusGrid(64)
        r64 = [poincare_pressure_ratio(g64, solve_pressure(g64, localized_velocity(g64, np.random.default_rng(k))).gradient, 0.8, fam)
               for k in range(3)]
        assert 0.5 <= max(r64) / max(r32[:3]) <= 2.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 5.0))
def test_pressure_homogeneity_property(seed, lam):
    g = TorusGrid(16)
    u = localized_velocity(g, np.random.default_rng(seed), sigma=g.L / 8, kmax=2)
    p1, p2 = solve_pressure(g, u).p, solve_pressure(g, lam * u).p
    assert np.allclose(p2, lam**2 * p1, atol=1e-12 * (1 + np.max(np.abs(p2))))
