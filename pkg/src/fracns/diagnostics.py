"""Regularity diagnostics: scale-optimal quantities, level sets and cylinder scans.

The quantities follow the local-regularity theory of the hypodissipative
system.  With ``delta = 2s/(6-s)`` and ``a = 1 - 2s``,

    F = (M |Lambda**s u|**(2/(1+delta)))**(1+delta) + |Lambda**(2s-1) grad p|
        + M_4(Lambda**(2s-1) grad p),
    G = y**a |grad_(x,y) u*|**2,

where ``M`` is the Hardy-Littlewood maximal function and ``M_4`` the
grand-maximal proxy of :mod:`fracns.maximal`.  Cylinders are
``Q_r(x, t) = B_r(x) x (t - r**(2s), t]`` by default (parabolic scaling of
the equation); ``time_exponent=2`` switches to ``t - r**2``.

Everything works on frames of a :class:`fracns.solver.Trajectory`; time
integrals over windows use the trapezoidal rule on the frame times with
linear interpolation at the window ends.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .extension import build_profile, extend, weighted_y_quadrature
from .fields import bump, mollify
from .maximal import TestFunctionFamily, grand_max_approx, hardy_littlewood_max, hermite_gaussian_family
from .pressure import solve_pressure
from .spectral import (
    TorusGrid,
    derivative_tensor,
    forward,
    fractional_laplacian,
    gradient,
    inverse,
    pointwise_norm,
    slobodeckij_seminorm,
)

#: the fixed bump of all psi-mean operations: ``(1 - |x|**2)**6`` on the unit ball, unit mass
PSI = bump


# Weak Lebesgue norms -------------------------------------------------------------

@dataclass(frozen=True)
class WeakLpResult:
    p: float
    C: float
    ladder: np.ndarray
    attained: float


def dyadic_level_ladder(values: np.ndarray) -> np.ndarray:
    """Levels ``max |f| 2**-k`` down to (and including) the smallest positive ``|f|``."""
    pos = values[values > 0]
    if pos.size == 0:
        return np.zeros(0)
    hi, lo = float(pos.max()), float(pos.min())
    k = int(np.floor(np.log2(hi / lo))) if hi > lo else 0
    ladder = hi * 2.0 ** -np.arange(k + 1)
    if ladder[-1] > lo:
        ladder = np.append(ladder, lo)
    return ladder


def weak_lp_norm(
    grid: TorusGrid | None, f: np.ndarray, p: float, mask: np.ndarray | None = None,
    ladder=None, weights: np.ndarray | float | None = None, vector: bool = False,
) -> WeakLpResult:
    """``sup_lambda lambda |{|f| > lambda}|**(1/p)`` over a level ladder.

    The measure of a super-level set is the number of samples above the level
    times the sample measure (``grid.cell_volume`` unless ``weights`` is
    given, e.g. cell volume times frame spacing for space-time samples).
    With ``vector=True`` the leading axis holds components and the Euclidean
    magnitude is used.
    The default ladder is :func:`dyadic_level_ladder`.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    f = np.asarray(f, dtype=float)
    mag = pointwise_norm(f) if vector else np.abs(f)
    if mask is not None:
        mask = np.broadcast_to(mask, mag.shape)
        if not mask.any():
            raise ValueError("empty region")
        vals = mag[mask]
        w = None if weights is None or np.isscalar(weights) else np.broadcast_to(weights, mag.shape)[mask]
    else:
        if mag.size == 0:
            raise ValueError("empty region")
        vals = mag.ravel()
        w = None if weights is None or np.isscalar(weights) else np.broadcast_to(weights, mag.shape).ravel()
    unit = grid.cell_volume if weights is None else (float(weights) if np.isscalar(weights) else 1.0)
    levels = dyadic_level_ladder(vals) if ladder is None else np.asarray(ladder, dtype=float)
    best, arg = 0.0, 0.0
    for lam in levels:
        sel = vals > lam
        meas = (np.sum(w[sel]) if w is not None else np.count_nonzero(sel)) * unit
        val = lam * meas ** (1 / p)
        if val > best:
            best, arg = float(val), float(lam)
    return WeakLpResult(float(p), best, levels, arg)


# Exponents --------------------------------------------------------------------------

def derivative_exponent(s: float, n: int) -> float:
    """``p = 2(3s - 1)/(n + 2s - 1)`` for ``s`` in ``(3/4, 1]`` and ``n`` in ``{1, 2}``."""
    if n not in (1, 2):
        raise ValueError("only n = 1, 2 give p >= 1")
    if not 0.75 <= s <= 1:
        raise ValueError("s must lie in [3/4, 1]")
    return 2 * (3 * s - 1) / (n + 2 * s - 1)


def dimension_polynomials(s):
    """The two bound polynomials evaluated anywhere (vectorized, no domain check)."""
    s = np.asarray(s, dtype=float)
    return (15 - 2 * s - 8 * s**2) / 3, (-16 * s**2 + 16 * s + 5) / 3


def dimension_bounds(s: float) -> tuple[float, float]:
    """Box-counting bounds ``((15 - 2s - 8s**2)/3, (-16s**2 + 16s + 5)/3)``.

    The first applies to the singular set of suitable weak solutions, the
    second to Leray-Hopf solutions in space.
    """
    if not 0.75 <= s <= 1:
        raise ValueError("s must lie in [3/4, 1]")
    a, b = dimension_polynomials(s)
    return float(a), float(b)


def dimension_curves(samples: int = 26) -> np.ndarray:
    """Rows ``(s, suitable bound, Leray-Hopf bound)`` on ``s`` in ``[3/4, 1]``."""
    s = np.linspace(0.75, 1.0, samples)
    b = np.array([dimension_bounds(v) for v in s])
    return np.column_stack([s, b])


# Scale-optimal quantities ---------------------------------------------------------

@dataclass(frozen=True)
class FQuantities:
    maximal: np.ndarray
    pressure: np.ndarray
    grand_max: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.maximal + self.pressure + self.grand_max


def delta_exponent(s: float) -> float:
    return 2 * s / (6 - s)


def scale_optimal_F(
    grid: TorusGrid, u: np.ndarray, s: float, p: np.ndarray | None = None,
    family: TestFunctionFamily | None = None,
) -> FQuantities:
    """The three addends of ``F`` at one time (pressure solved from ``u`` if not given)."""
    u = grid.check(u)
    d = delta_exponent(s)
    lam_s = pointwise_norm(fractional_laplacian(grid, u, s))
    maximal = hardy_littlewood_max(grid, lam_s ** (2 / (1 + d))) ** (1 + d)
    if p is None:
        p = solve_pressure(grid, u).p
    g = fractional_laplacian(grid, gradient(grid, p), 2 * s - 1)
    family = hermite_gaussian_family() if family is None else family
    if np.max(np.abs(g)) == 0:
        zero = np.zeros(grid.shape)
        return FQuantities(maximal, zero, zero.copy())
    return FQuantities(maximal, pointwise_norm(g), grand_max_approx(grid, g, family))


def scale_optimal_G(grid: TorusGrid, u: np.ndarray, s: float, y) -> np.ndarray:
    """``G = y**a |grad u*|**2`` at the heights ``y`` (shape ``(len(y),) + grid.shape``)."""
    ext = extend(grid, u, s, [1.0])
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty((y.size,) + grid.shape)
    for i, yi in enumerate(y):
        out[i] = yi ** (1 - 2 * s) * _grad_sq(grid, ext, yi)
    return out


def _grad_sq(grid: TorusGrid, ext, y: float) -> np.ndarray:
    gx = gradient(grid, ext.at(y)).reshape((-1,) + grid.shape)
    dy = ext.dy_at(y).reshape((-1,) + grid.shape)
    return np.sum(gx**2, axis=0) + np.sum(dy**2, axis=0)


def extension_column(grid: TorusGrid, u: np.ndarray, s: float, height: float,
                     panels: int = 4, order: int = 6) -> np.ndarray:
    """``int_0^height G(x, y) dy`` at every ``x`` (weighted Gauss rule in ``y``)."""
    ext = extend(grid, u, s, [height])
    ys, ws = weighted_y_quadrature(s, height, panels, order)
    out = np.zeros(grid.shape)
    for y, w in zip(ys, ws):
        out += w * _grad_sq(grid, ext, y)
    return out


def F_global_ratio(grid: TorusGrid, u: np.ndarray, s: float, family=None) -> float:
    """``int F / ||Lambda**s u||_2**2`` (zero for zero velocity)."""
    den = float(np.sum(pointwise_norm(fractional_laplacian(grid, u, s)) ** 2) * grid.cell_volume)
    if den == 0:
        return 0.0
    return float(np.sum(scale_optimal_F(grid, u, s, family=family).total) * grid.cell_volume / den)


# Time windows ----------------------------------------------------------------------

def _trapezoid(y, x, axis=0):
    fn = getattr(np, "trapezoid", None) or np.trapz
    return fn(y, x, axis=axis)


def slab_dissipation(traj, t: float, width: float) -> float:
    """``int_{t - width}^t ||Lambda**s u||_2**2`` from the frames."""
    rates = [np.sum(pointwise_norm(fractional_laplacian(traj.grid, f, traj.s)) ** 2) * traj.grid.cell_volume
             for f in traj.frames]
    return float(_window_scalar(traj.times, np.asarray(rates), t - width, t))


def _window_scalar(times, vals, lo, hi) -> float:
    times = np.asarray(times, dtype=float)
    if lo < times[0] - 1e-12 or hi > times[-1] + 1e-12:
        raise ValueError(f"window [{lo}, {hi}] outside the trajectory span")
    if hi <= lo:
        return 0.0
    inner = (times > lo) & (times < hi)
    pts = np.concatenate([[lo], times[inner], [hi]])
    return float(_trapezoid(np.interp(pts, times, vals), pts))


def inner_radius(r: float) -> float:
    """Ball radius used for cell membership: ``r`` shrunk by a relative ``1e-9``.

    Lattice points at distance exactly ``r`` from a lattice center would
    otherwise flip in and out of the ball under round-off, which breaks the
    translation invariance of cylinder scans.
    """
    return r * (1 - 1e-9)


# Local Slobodeckij integral ----------------------------------------------------------

def local_slobodeckij(grid: TorusGrid, f: np.ndarray, s: float, center, radius: float) -> float:
    """``int_B int_B |f(x) - f(y)|**2 / |x - y|**(3+2s)`` over ``B = B(center, radius)``.

    Same pair set as the brute-force :func:`fracns.spectral.slobodeckij_seminorm`
    (pairs closer than ``h/2`` excluded) but evaluated with FFT correlations:
    with ``chi`` the ball indicator and ``K`` the kernel,
    ``sum chi chi' K |f - f'|**2 = 2 sum chi |f|**2 (K * chi) - 2 sum chi f (K * chi f)``.
    Requires ``radius < L/4`` so that no pair wraps around the cell.
    """
    from .maximal import _convolve

    if radius >= grid.L / 4:
        raise ValueError("ball radius must be below L/4")
    f = grid.check(f).reshape((-1,) + grid.shape)
    chi = (grid.distance(center) < radius).astype(float)
    r = grid.distance(np.zeros(3))
    K = np.zeros(grid.shape)
    far = r > 0.5 * grid.h
    K[far] = r[far] ** (-(3 + 2 * s))
    kchi = _convolve(grid, chi, K)
    total = 0.0
    for c in f:
        total += 2 * np.sum(chi * c**2 * kchi) - 2 * np.sum(chi * c * _convolve(grid, chi * c, K))
    return float(max(total, 0.0) * grid.cell_volume**2)


# Local energy inequality ---------------------------------------------------------------

@dataclass(frozen=True)
class LEIResult:
    residual: float
    relative: float
    terms: dict


def half_line_quadrature(grid: TorusGrid, s: float, order: int = 8, ratio: float = 2.0,
                         decay: float = 40.0) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for ``int_0^inf y**a g(y) dy`` when ``g`` mixes all grid modes.

    Mode ``k`` of ``g`` varies on the scale ``1/k``; the rule is a weighted
    Gauss panel on ``[0, y0]`` with ``y0 = 0.05/k_max`` followed by Gauss
    panels in ``log y`` growing by ``ratio`` up to ``decay/k_min``, beyond
    which every mode is below ``exp(-decay)``.
    """
    a = 1 - 2 * s
    k_min, k_max = 2 * np.pi / grid.L, float(grid.kmag.max())
    y0 = 0.05 / k_max
    n0, w0 = weighted_y_quadrature(s, y0, 1, order)
    x, wt = np.polynomial.legendre.leggauss(order)
    count = int(np.ceil(np.log(decay / k_min / y0) / np.log(ratio)))
    edges = np.log(y0) + np.arange(count + 1) * np.log(ratio)
    nodes, weights = [n0], [w0]
    for lo, hi in zip(edges[:-1], edges[1:]):
        v = lo + (hi - lo) * (x + 1) / 2
        y = np.exp(v)
        nodes.append(y)
        weights.append(wt * (hi - lo) / 2 * y ** (1 + a))
    return np.concatenate(nodes), np.concatenate(weights)


def _extension_pair(grid: TorusGrid, uh: np.ndarray, profile, y: float) -> tuple[np.ndarray, np.ndarray]:
    """``(|grad_(x,y) u*|**2, |u*|**2)`` at height ``y`` from the boundary spectrum ``uh``."""
    k = grid.kmag
    ky = k * y
    ch = uh * profile(ky)
    dh = uh * (k * profile.derivative(ky))
    stack = [ch, dh] + [1j * kk * ch for kk in grid.wavevector_odd]
    vals = inverse(grid, np.concatenate(stack))
    m = uh.shape[0]
    val = np.sum(vals[:m] ** 2, axis=0)
    grad = np.sum(vals[m:] ** 2, axis=0)
    return grad, val


def _time_quadrature(ts: np.ndarray, vals) -> float:
    """Simpson's rule on the frame times (trapezoid for two frames)."""
    vals = np.asarray(vals, dtype=float)
    if ts.size < 3:
        return float(_trapezoid(vals, ts))
    return float(integrate.simpson(vals, x=ts))


def local_energy_residual(
    traj, phi: np.ndarray, eta=None, eta_dot=None, window: tuple[float, float] | None = None,
    order: int = 8,
) -> LEIResult:
    """Right side minus left side of the local energy inequality.

    The test function is ``xi(x, y, t) = phi(x) eta(t)``, independent of
    ``y`` (so ``lim y**a d_y xi = 0`` and ``div(y**a grad xi) = y**a eta Delta phi``).
    With ``C = C_bar_s``::

        LHS = int |u(t1)|**2 xi(t1) + 2 C int int y**a |grad u*|**2 xi
        RHS = int |u(t0)|**2 xi(t0) + C int int y**a |u*|**2 eta Delta phi
              + int int (u . grad xi)(2p + |u|**2) + int int |u|**2 d_t xi

    For smooth solutions the two sides agree, so the residual measures the
    discretization error (Simpson's rule over the frames in time, the rule of
    :func:`half_line_quadrature` in ``y``).  ``relative`` divides by
    ``int |u(t0)|**2 xi(t0) + 2 C int int y**a |grad u*|**2 xi``.
    """
    grid, s = traj.grid, traj.s
    phi = grid.check(phi)
    if np.min(phi) < -1e-14:
        raise ValueError("test function must be non-negative")
    eta = (lambda t: 1.0) if eta is None else eta
    eta_dot = (lambda t: 0.0) if eta_dot is None else eta_dot
    times = np.asarray(traj.times)
    t0, t1 = (times[0], times[-1]) if window is None else window
    idx = np.nonzero((times >= t0 - 1e-12) & (times <= t1 + 1e-12))[0]
    if idx.size < 2:
        raise ValueError("window must contain at least two frames")
    ts = times[idx]
    profile = build_profile(s)
    C = profile.recovery_constant
    ys, ws = half_line_quadrature(grid, s, order)
    dphi = gradient(grid, phi)
    lap_phi = fractional_laplacian(grid, phi, 2.0) * -1.0
    hv = grid.cell_volume
    rows = {"dissipation": [], "extension": [], "flux": [], "time": []}
    energy = []
    for k in idx:
        u = traj.frames[k]
        t = times[k]
        p = traj.pressure[k] if traj.pressure is not None else solve_pressure(grid, u).p
        uh = forward(grid, u)
        e_grad, e_val = 0.0, 0.0
        if np.any(uh):
            for y, w in zip(ys, ws):
                gsq, vsq = _extension_pair(grid, uh, profile, y)
                e_grad += w * np.sum(gsq * phi)
                e_val += w * np.sum(vsq * lap_phi)
        usq = np.sum(u**2, axis=0)
        rows["dissipation"].append(2 * C * e_grad * hv * eta(t))
        rows["extension"].append(C * e_val * hv * eta(t))
        rows["flux"].append(eta(t) * np.sum(np.sum(u * dphi, axis=0) * (2 * p + usq)) * hv)
        rows["time"].append(eta_dot(t) * np.sum(usq * phi) * hv)
        energy.append(np.sum(usq * phi) * hv * eta(t))
    integ = {name: _time_quadrature(ts, v) for name, v in rows.items()}
    e_start, e_end = float(energy[0]), float(energy[-1])
    lhs = e_end + integ["dissipation"]
    rhs = e_start + integ["extension"] + integ["flux"] + integ["time"]
    scale = e_start + integ["dissipation"]
    res = rhs - lhs
    terms = dict(integ, start=e_start, end=e_end, lhs=lhs, rhs=rhs)
    return LEIResult(float(res), float(res / scale) if scale > 0 else 0.0, terms)


# Mollified velocity and flow map -------------------------------------------------------

class FlowMapError(RuntimeError):
    """The flow-map integration produced non-finite positions."""


def mollified_velocity(grid: TorusGrid, u: np.ndarray, lam: float) -> np.ndarray:
    """``u_bar(x) = int u(x + lam y) psi(y) dy`` with the fixed bump ``psi`` (spectral, exact symbol)."""
    if lam < grid.h:
        raise ValueError("mollification scale must be at least the grid spacing")
    return mollify(grid, u, lam)


class PointEvaluator:
    """Evaluate band-limited fields at arbitrary points from their spectra (Nyquist modes dropped)."""

    def __init__(self, grid: TorusGrid):
        self.grid = grid
        n = grid.n
        m = np.fft.fftfreq(n, 1.0 / n)
        keep = np.abs(m) < n / 2
        self.kxy = 2 * np.pi / grid.L * np.where(keep, m, 0.0)
        self.keep_xy = keep
        mz = np.arange(n // 2 + 1)
        self.kz = 2 * np.pi / grid.L * mz
        self.wz = np.where((mz == 0), 1.0, np.where(mz == n // 2, 0.0, 2.0))

    def spectrum(self, f: np.ndarray) -> np.ndarray:
        fh = np.fft.rfftn(f, axes=(-3, -2, -1))
        fh = fh * self.keep_xy[:, None, None] * self.keep_xy[None, :, None]
        return fh * self.wz / self.grid.n**3

    def __call__(self, fh: np.ndarray, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        e1 = np.exp(1j * np.outer(x[:, 0], self.kxy))
        e2 = np.exp(1j * np.outer(x[:, 1], self.kxy))
        e3 = np.exp(1j * np.outer(x[:, 2], self.kz))
        t = np.einsum("...abc,pc->...pab", fh, e3)
        t = np.einsum("...pab,pb->...pa", t, e2)
        return np.einsum("...pa,pa->...p", t, e1).real


@dataclass(frozen=True)
class FlowPaths:
    times: np.ndarray
    positions: np.ndarray  # (len(times), points, 3)


def flow_map(traj, lam: float, seeds, t: float, t_start: float | None = None, substeps: int = 4) -> FlowPaths:
    """Backward paths of ``d_tau Phi = u_bar_lam(Phi, tau)``, ``Phi(t) = x``, with RK4.

    The mollified velocity is interpolated linearly in time between frames
    and evaluated spectrally in space.  ``t_start`` defaults to
    ``max(t - (5 lam)**(2s), first frame time)``.  Positions are reported at
    the frame times in ``[t_start, t]`` (descending) plus the end points.
    """
    grid = traj.grid
    times = np.asarray(traj.times)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if t_start is None:
        t_start = max(t - (5 * lam) ** (2 * traj.s), times[0])
    if t_start < times[0] - 1e-12 or t > times[-1] + 1e-12 or t_start > t:
        raise ValueError("flow-map window outside the trajectory span")
    ev = PointEvaluator(grid)
    specs = {}

    def spec(k):
        if k not in specs:
            specs[k] = ev.spectrum(mollified_velocity(grid, traj.frames[k], lam))
        return specs[k]

    def velocity(x, tau):
        k = int(np.clip(np.searchsorted(times, tau, side="right") - 1, 0, len(times) - 2))
        th = (tau - times[k]) / (times[k + 1] - times[k])
        v = (1 - th) * ev(spec(k), x) + th * ev(spec(k + 1), x)
        return v.T

    inner = times[(times > t_start + 1e-12) & (times < t - 1e-12)][::-1]
    marks = np.concatenate([[t], inner, [t_start]])
    x = seeds.copy()
    out = [x.copy()]
    for hi, lo in zip(marks[:-1], marks[1:]):
        h = (lo - hi) / substeps
        tau = hi
        for _ in range(substeps):
            k1 = velocity(x, tau)
            k2 = velocity(x + h / 2 * k1, tau + h / 2)
            k3 = velocity(x + h / 2 * k2, tau + h / 2)
            k4 = velocity(x + h * k3, tau + h)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            tau += h
        if not np.all(np.isfinite(x)):
            raise FlowMapError("non-finite flow-map position")
        out.append(x.copy())
    return FlowPaths(marks, np.stack(out))


def tetrahedron_seeds(base: np.ndarray, edge: float) -> np.ndarray:
    """For each base point, the point and its three offsets ``edge e_i`` (shape ``(4 P, 3)``)."""
    base = np.atleast_2d(base)
    offs = np.vstack([np.zeros(3), edge * np.eye(3)])
    return (base[:, None, :] + offs[None, :, :]).reshape(-1, 3)


def volume_distortion(paths: FlowPaths, edge: float) -> np.ndarray:
    """``|det(D Phi)| - 1`` per tetrahedron at every reported time (shape ``(times, P)``)."""
    pos = paths.positions.reshape(paths.positions.shape[0], -1, 4, 3)
    J = (pos[:, :, 1:, :] - pos[:, :, :1, :]) / edge  # rows: images of e_i
    return np.abs(np.linalg.det(J)) - 1.0


# Cylinder scans -------------------------------------------------------------------------

@dataclass(frozen=True)
class CylinderSpec:
    center: tuple
    t: float
    r: float
    time_exponent: float

    @property
    def t_start(self) -> float:
        return self.t - self.r**self.time_exponent


@dataclass
class ScanReport:
    s: float
    eps: float
    cylinders: list
    quantities: list  # dicts of unit-rescaled terms
    totals: np.ndarray
    bad: np.ndarray
    radii: np.ndarray
    bad_counts: dict
    slope: float
    slope_bound: float
    meta: dict = field(default_factory=dict)

    def verdicts(self, eps: float | None = None) -> np.ndarray:
        """``True`` where the cylinder is small, recomputed from the stored totals."""
        e = self.eps if eps is None else eps
        return self.totals <= e

    def counts(self, eps: float | None = None) -> dict:
        small = self.verdicts(eps)
        return {float(r): int(np.sum(~small[self.cyl_radius == r])) for r in self.radii}

    @property
    def cyl_radius(self) -> np.ndarray:
        return np.array([c.r for c in self.cylinders])

    def with_eps(self, eps: float) -> "ScanReport":
        """The same scan thresholded at ``eps`` (verdicts, counts and slope recomputed)."""
        bad = ~self.verdicts(eps)
        counts = self.counts(eps)
        return dataclasses.replace(self, eps=float(eps), bad=bad, bad_counts=counts, slope=_count_slope(counts))

    def as_dict(self) -> dict:
        return {
            "s": self.s, "eps": self.eps,
            "cylinders": [{"center": list(map(float, c.center)), "t": c.t, "r": c.r,
                           "time_exponent": c.time_exponent, **q, "total": float(tot), "small": bool(tot <= self.eps)}
                          for c, q, tot in zip(self.cylinders, self.quantities, self.totals)],
            "bad_counts": {str(k): v for k, v in self.bad_counts.items()},
            "slope": self.slope, "slope_bound": self.slope_bound, **self.meta,
        }


SCALE_OPTIMAL = ("extension", "slobodeckij", "maximal", "pressure", "grand_max")
CUBIC = ("cubic",)


class _FrameCache:
    """Per-frame densities reused by every cylinder of a scan."""

    def __init__(self, traj, family):
        self.traj = traj
        self.family = family
        self._F = {}
        self._cubic = {}
        self._column = {}

    def F(self, k):
        if k not in self._F:
            g, u = self.traj.grid, self.traj.frames[k]
            p = self.traj.pressure[k] if self.traj.pressure is not None else solve_pressure(g, u).p
            self._F[k] = scale_optimal_F(g, u, self.traj.s, p, self.family)
            self._cubic[k] = np.sum(u**2, axis=0) ** 1.5 + np.abs(p) ** 1.5
        return self._F[k]

    def cubic(self, k):
        self.F(k)
        return self._cubic[k]

    def column(self, k, r):
        key = (k, r)
        if key not in self._column:
            self._column[key] = extension_column(self.traj.grid, self.traj.frames[k], self.traj.s, r)
        return self._column[key]


def cylinder_quantities(traj, cyl: CylinderSpec, cache: _FrameCache) -> dict:
    """Raw cylinder integrals of the smallness sum (not rescaled)."""
    grid = traj.grid
    times = np.asarray(traj.times)
    lo, hi = cyl.t_start, cyl.t
    if lo < times[0] - 1e-12 or hi > times[-1] + 1e-12:
        raise ValueError("cylinder time extent outside the trajectory span")
    sel = np.nonzero((times >= lo - 1e-12) & (times <= hi + 1e-12))[0]
    # frames needed for interpolation at the window ends
    k_lo = max(0, int(np.searchsorted(times, lo, side="right")) - 1)
    k_hi = min(len(times) - 1, int(np.searchsorted(times, hi, side="left")))
    ks = np.unique(np.concatenate([[k_lo, k_hi], sel]))
    rb = inner_radius(cyl.r)
    mask = grid.distance(np.asarray(cyl.center)) < rb
    hv = grid.cell_volume
    rows = {name: [] for name in SCALE_OPTIMAL + CUBIC}
    for k in ks:
        Fq = cache.F(k)
        rows["maximal"].append(np.sum(Fq.maximal[mask]) * hv)
        rows["pressure"].append(np.sum(Fq.pressure[mask]) * hv)
        rows["grand_max"].append(np.sum(Fq.grand_max[mask]) * hv)
        rows["cubic"].append(np.sum(cache.cubic(k)[mask]) * hv)
        rows["extension"].append(np.sum(cache.column(k, cyl.r)[mask]) * hv)
        rows["slobodeckij"].append(slobodeckij_seminorm(grid, traj.frames[k], traj.s, center=np.asarray(cyl.center),
                                                        radius=rb))
    return {name: _window_scalar(times[ks], np.asarray(v), lo, hi) for name, v in rows.items()}


def rescale_quantities(raw: dict, r: float, s: float) -> dict:
    """Unit-cylinder values: scale-optimal terms divided by ``r**(5-4s)``, cubic ones by ``r**(6-4s)``.

    Under ``u_r(x, t) = r**(2s-1) u(r x, r**(2s) t)`` the scale-optimal
    integrals over ``Q_r`` equal ``r**(5-4s)`` times those of ``u_r`` over
    ``Q_1``; the cubic terms carry ``r**(6-4s)``.
    """
    out = {}
    for name, v in raw.items():
        e = (6 - 4 * s) if name in CUBIC else (5 - 4 * s)
        out[name] = float(v / r**e)
    return out


def scan_centers(grid: TorusGrid, r: float) -> np.ndarray:
    """Grid-point centers on a lattice of spacing about ``2 r`` (pairwise disjoint balls)."""
    step = max(1, int(round(2 * r / grid.h)))
    idx = np.arange(0, grid.n, step)
    x = grid.x1d[idx]
    return np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)


def eps_regularity_scan(
    traj, eps: float, radii, times=None, centers=None, family: TestFunctionFamily | None = None,
    time_exponent: float | None = None,
) -> ScanReport:
    """Evaluate the smallness sum on a family of cylinders.

    For each radius ``r`` and each time in ``times`` (default: the last frame)
    the centers default to :func:`scan_centers`.  Each cylinder's sum is the
    unit-rescaled total of the extension energy over ``B_r x [0, r)``, the
    space-time Slobodeckij integral over ``B_r x B_r``, the three ``F``
    addends and ``|u|**3 + |p|**(3/2)``; it is small iff the sum is at most
    ``eps``.  ``slope`` is the least-squares slope of ``log M'(r)`` against
    ``log(1/r)`` over radii with a positive bad count (NaN otherwise).
    """
    grid, s = traj.grid, traj.s
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    if radii.max() > grid.L / 8 + 1e-12:
        raise ValueError("ladder radius exceeds L/8")
    texp = 2 * s if time_exponent is None else time_exponent
    times = [float(traj.times[-1])] if times is None else [float(t) for t in times]
    family = hermite_gaussian_family() if family is None else family
    cache = _FrameCache(traj, family)
    cyls, quants, totals = [], [], []
    for r in radii:
        cs = scan_centers(grid, r) if centers is None else np.atleast_2d(centers)
        for t in times:
            for c in cs:
                cyl = CylinderSpec(tuple(float(v) for v in c), t, float(r), texp)
                q = rescale_quantities(cylinder_quantities(traj, cyl, cache), r, s)
                cyls.append(cyl)
                quants.append(q)
                totals.append(sum(q.values()))
    totals = np.asarray(totals)
    bad = totals > eps
    rr = np.array([c.r for c in cyls])
    counts = {float(r): int(np.sum(bad[rr == r])) for r in radii}
    return ScanReport(s, eps, cyls, quants, totals, bad, radii, counts, _count_slope(counts),
                      dimension_bounds(max(s, 0.75))[0], {"time_exponent": texp, "times": times})


def _count_slope(counts: dict) -> float:
    """Least-squares slope of ``log M'(r)`` against ``log(1/r)`` over radii with bad cylinders."""
    pos = [(r, m) for r, m in counts.items() if m > 0]
    if len(pos) < 2:
        return float("nan")
    return float(np.polyfit(np.log([1 / r for r, _ in pos]), np.log([m for _, m in pos]), 1)[0])


def calibrated_eps(report: ScanReport, factor: float = 2.0) -> float:
    """Self-calibrated threshold: ``factor`` times the largest cylinder sum."""
    return float(factor * report.totals.max()) if report.totals.size else 0.0


# Level sets (Chebyshev) ---------------------------------------------------------------------

@dataclass
class LevelSetRow:
    lam: float
    window: float
    dissipation: float
    thresholds: dict
    measures: dict
    ratios: dict
    H_measure: float | None = None
    H_ratio: float | None = None


def H_lambda(traj, lam: float, t: float, probes: np.ndarray, family=None, substeps: int = 2) -> np.ndarray:
    """``H^lambda(x, t)`` at the probe points along the flow map of the mollified velocity."""
    grid, s = traj.grid, traj.s
    rho = 5 * lam
    family = hermite_gaussian_family() if family is None else family
    paths = flow_map(traj, lam, probes, t, t - rho ** (2 * s), substeps)
    times = np.asarray(traj.times)
    cache = _FrameCache(traj, family)
    hv = grid.cell_volume
    out = np.zeros(len(probes))
    for i in range(len(probes)):
        vals = []
        for j, tau in enumerate(paths.times):
            k = int(np.argmin(np.abs(times - tau)))
            if abs(times[k] - tau) > 1e-9:
                # path end points between frames: interpolate the frame values in time
                k = min(max(int(np.searchsorted(times, tau)) - 1, 0), len(times) - 2)
                th = (tau - times[k]) / (times[k + 1] - times[k])
                parts = [(k, 1 - th), (k + 1, th)]
            else:
                parts = [(k, 1.0)]
            c = paths.positions[j, i]
            mask = grid.distance(c) < inner_radius(rho)
            v = 0.0
            for kk, wgt in parts:
                v += wgt * (np.sum(cache.F(kk).total[mask]) * hv + np.sum(cache.column(kk, rho)[mask]) * hv
                            + local_slobodeckij(grid, traj.frames[kk], s, c, inner_radius(rho)))
            vals.append(v)
        order = np.argsort(paths.times)
        out[i] = _trapezoid(np.asarray(vals)[order], paths.times[order])
    return out


def levelset_bound_check(
    traj, lams, t: float | None = None, orders=(1, 2), C0: float = 1.0,
    probes: np.ndarray | None = None, eps: float | None = None, family=None,
) -> list[LevelSetRow]:
    """Chebyshev level-set table across a ``lambda`` ladder.

    For each ``lambda``: the measures of ``{|grad**n u(t)| >= C0 lambda**-(2s+n-1)}``
    and their ratios to ``lambda**(6s-2)`` times the slab dissipation
    ``int_{t-(5 lambda)**(2s)}^t ||Lambda**s u||_2**2``.  With ``probes``
    and ``eps`` given, ``H^lambda`` is also evaluated and the measure of
    ``{H^lambda > eps lambda**(5-4s)}`` estimated from the probe fraction.
    """
    grid, s = traj.grid, traj.s
    t = float(traj.times[-1]) if t is None else float(t)
    k = int(np.argmin(np.abs(np.asarray(traj.times) - t)))
    if abs(traj.times[k] - t) > 1e-9:
        raise ValueError("t must be a frame time")
    mags = {n: pointwise_norm(derivative_tensor(grid, traj.frames[k], n), ndim=3) for n in orders}
    rows = []
    for lam in np.sort(np.asarray(lams, dtype=float)):
        w = (5 * lam) ** (2 * s)
        if t - w < traj.times[0] - 1e-12:
            raise ValueError("ladder exceeds the time span: need t > (5 lambda)**(2s)")
        D = slab_dissipation(traj, t, w)
        th = {n: C0 * lam ** (-(2 * s + n - 1)) for n in orders}
        meas = {n: float(np.count_nonzero(mags[n] >= th[n]) * grid.cell_volume) for n in orders}
        base = lam ** (6 * s - 2) * D
        ratios = {n: (meas[n] / base if base > 0 else 0.0) for n in orders}
        row = LevelSetRow(float(lam), float(w), D, th, meas, ratios)
        if probes is not None and eps is not None:
            H = H_lambda(traj, lam, t, probes, family)
            frac = float(np.mean(H > eps * lam ** (5 - 4 * s)))
            row.H_measure = frac * grid.volume
            row.H_ratio = row.H_measure / base if base > 0 else 0.0
        rows.append(row)
    return rows


def ladder_spread(rows: list[LevelSetRow], n: int) -> float:
    """``max/min`` of the level-set ratios over the ladder (inf if some set is empty)."""
    r = np.array([row.ratios[n] for row in rows])
    if np.all(r == 0):
        return float("nan")
    return float(r.max() / r.min()) if r.min() > 0 else float("inf")


# A priori weak-L^p check -----------------------------------------------------------------------------

def spacetime_weak_norm(traj, n: int, t0: float, K: np.ndarray | None = None) -> float:
    """``||grad**n u||_{L^{p,inf}(K x (t0, T))}**p`` with ``p = derivative_exponent(s, n)``.

    Frames after ``t0`` carry the measure ``cell volume x frame spacing``.
    """
    grid, s = traj.grid, traj.s
    p = derivative_exponent(s, n)
    times = np.asarray(traj.times)
    sel = np.nonzero(times > t0 - 1e-12)[0]
    if sel.size < 2:
        raise ValueError("need at least two frames after t0")
    dt = np.diff(times[sel]).mean()
    vals = np.stack([pointwise_norm(derivative_tensor(grid, traj.frames[k], n), ndim=3) for k in sel])
    mask = None if K is None else np.broadcast_to(K, vals.shape)
    res = weak_lp_norm(None, vals, p, mask=mask, weights=grid.cell_volume * dt)
    return res.C**p


def apriori_weak_lp_ratio(traj, n: int, t0: float, K: np.ndarray | None = None) -> float:
    """``||grad**n u||**p_{p,inf} / (||u_0||_2**2 + |K| t0**-(2 - 1/s))``."""
    grid, s = traj.grid, traj.s
    volK = grid.volume if K is None else float(np.count_nonzero(K) * grid.cell_volume)
    e0 = float(np.sum(traj.frames[0] ** 2) * grid.cell_volume)
    den = e0 + volK * t0 ** (-(2 - 1 / s))
    return spacetime_weak_norm(traj, n, t0, K) / den


@dataclass(frozen=True)
class InclusionReport:
    lam: float
    threshold: float
    H: np.ndarray
    in_level_set: np.ndarray
    eps: float
    included: np.ndarray

    @property
    def holds(self) -> bool:
        return bool(np.all(self.included[self.in_level_set]))


def levelset_inclusion(
    traj, lam: float, t: float, probe_index: np.ndarray, n: int = 2, C0: float = 1.0,
    eps: float | None = None, family=None,
) -> InclusionReport:
    """Point-by-point check that ``{|grad**n u| >= C0 lambda**-(2s+n-1)}`` lies in ``{H**lambda > eps lambda**(5-4s)}``.

    ``probe_index`` holds integer grid indices (shape ``(P, 3)``) so that
    ``|grad**n u|`` is known exactly at the probes.  Without ``eps`` the
    calibrated value is used: just below the smallest ``H**lambda lambda**(4s-5)``
    over the probes in the level set (zero if none are).
    """
    grid, s = traj.grid, traj.s
    idx = np.atleast_2d(np.asarray(probe_index, dtype=int)) % grid.n
    k = int(np.argmin(np.abs(np.asarray(traj.times) - t)))
    mag = pointwise_norm(derivative_tensor(grid, traj.frames[k], n), ndim=3)[idx[:, 0], idx[:, 1], idx[:, 2]]
    thr = C0 * lam ** (-(2 * s + n - 1))
    pts = grid.x1d[idx]
    H = H_lambda(traj, lam, t, pts, family)
    inside = mag >= thr
    scale = lam ** (5 - 4 * s)
    if eps is None:
        eps = float(np.min(H[inside]) / scale * (1 - 1e-9)) if inside.any() else 0.0
    return InclusionReport(float(lam), float(thr), H, inside, float(eps), H > eps * scale)
