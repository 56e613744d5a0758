"""Periodic grid, Fourier transforms and homogeneous multipliers.

Fields are plain float64 arrays: scalars have shape ``(n, n, n)`` and vector
fields ``(3, n, n, n)``; any leading axes are treated as components.  The
Fourier transform uses the continuum convention

    f_hat(xi) = int f(x) exp(-i x.xi) dx  ~=  h**3 * FFT(f),

so a constant ``c`` has a single coefficient ``c * L**3`` at ``xi = 0``.
Transforms are real-to-complex (``rfftn``) over the last three axes.

Zero-mode convention: every homogeneous multiplier (``|xi|**g``, Riesz
transforms, inverse Laplacian) maps ``xi = 0`` to zero.  Odd multipliers
(derivatives, Riesz transforms) additionally vanish on Nyquist planes, where
an odd symbol has no real-valued counterpart.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy import special

AXES = (-3, -2, -1)


def fft_workers() -> int:
    """Thread cap for FFTs, taken from ``FRACNS_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("FRACNS_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class DissipationOrder:
    """Dissipation exponent ``s`` in ``(3/4, 1)`` with ``a = 1 - 2s`` and ``delta = 2s/(6 - s)``."""

    s: float

    def __post_init__(self):
        if not 0.75 < self.s < 1:
            raise ValueError(f"dissipation order s={self.s} outside (3/4, 1)")

    @property
    def a(self) -> float:
        return 1 - 2 * self.s

    @property
    def delta(self) -> float:
        return 2 * self.s / (6 - self.s)


class GridMismatchError(ValueError):
    """Raised when a field's shape does not match the grid it is used with."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on ``[0, L)**3`` with ``n`` points per axis."""

    n: int
    L: float = 2 * np.pi

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n_per_dim must be even and >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"box_length must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return self.h**3

    @property
    def volume(self) -> float:
        return self.L**3

    @cached_property
    def x1d(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays ``(x1, x2, x3)``."""
        x = self.x1d
        return (x[:, None, None], x[None, :, None], x[None, None, :])

    def centered_offsets(self, center=None) -> tuple[np.ndarray, ...]:
        """Minimum-image displacement ``x - center`` along each axis."""
        if center is None:
            center = (self.L / 2,) * 3
        out = []
        for axis, c in enumerate(center):
            d = self.x1d - c
            d = d - self.L * np.round(d / self.L)
            shape = [1, 1, 1]
            shape[axis] = self.n
            out.append(d.reshape(shape))
        return tuple(out)

    def distance(self, center=None) -> np.ndarray:
        """Periodic distance of every grid point from ``center`` (default: cell center)."""
        d1, d2, d3 = self.centered_offsets(center)
        return np.sqrt(d1**2 + d2**2 + d3**2)

    @cached_property
    def k1d(self) -> np.ndarray:
        return 2 * np.pi / self.L * sfft.fftfreq(self.n, 1.0 / self.n)

    @cached_property
    def wavevector(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wavenumbers on the rfft layout, integer multiples of ``2 pi / L``."""
        k = self.k1d
        kz = 2 * np.pi / self.L * np.arange(self.n // 2 + 1)
        return (k[:, None, None], k[None, :, None], kz[None, None, :])

    @cached_property
    def wavevector_odd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wavenumbers with the Nyquist entry zeroed (for odd symbols)."""
        out = []
        for axis, k in enumerate(self.wavevector):
            k = k.copy()
            k[tuple(slice(None) if i != axis else self.n // 2 for i in range(3))] = 0.0
            out.append(k)
        return tuple(out)

    @cached_property
    def kmag(self) -> np.ndarray:
        k1, k2, k3 = self.wavevector
        return np.sqrt(k1**2 + k2**2 + k3**2)

    @cached_property
    def kmag_odd(self) -> np.ndarray:
        k1, k2, k3 = self.wavevector_odd
        return np.sqrt(k1**2 + k2**2 + k3**2)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule: keep integer modes with ``|m_i| < n/3`` on every axis."""
        m = np.abs(sfft.fftfreq(self.n, 1.0 / self.n))
        mz = np.arange(self.n // 2 + 1)
        cut = self.n / 3.0
        return (m[:, None, None] < cut) & (m[None, :, None] < cut) & (mz[None, None, :] < cut)

    @cached_property
    def rfft_weights(self) -> np.ndarray:
        """Multiplicity of each rfft coefficient in the full spectrum (for Parseval)."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[None, None, :]

    def check(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-3:] != self.shape:
            raise GridMismatchError(f"field shape {f.shape} does not match grid {self.shape}")
        return f


def forward(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """Continuum-normalised forward transform over the last three axes."""
    f = grid.check(f)
    return grid.cell_volume * sfft.rfftn(f, axes=AXES, workers=fft_workers())


def inverse(grid: TorusGrid, fh: np.ndarray) -> np.ndarray:
    if fh.shape[-3:] != (grid.n, grid.n, grid.n // 2 + 1):
        raise GridMismatchError(f"spectrum shape {fh.shape} does not match grid {grid.shape}")
    return sfft.irfftn(fh, s=grid.shape, axes=AXES, workers=fft_workers()) / grid.cell_volume


def apply_multiplier(grid: TorusGrid, f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    f = grid.check(f)
    fh = sfft.rfftn(f, axes=AXES, workers=fft_workers())
    return sfft.irfftn(fh * symbol, s=grid.shape, axes=AXES, workers=fft_workers())


def l2_norm_sq_spectral(grid: TorusGrid, fh: np.ndarray) -> float:
    """``||f||_2**2`` from continuum coefficients (Parseval on the torus)."""
    return float(np.sum(grid.rfft_weights * np.abs(fh) ** 2) / grid.volume)


def lp_norm(grid: TorusGrid, f: np.ndarray, p: float, mask: np.ndarray | None = None) -> float:
    """Grid ``L^p`` norm; vector fields use the pointwise Euclidean magnitude."""
    f = np.asarray(f, dtype=float)
    a = np.sqrt(np.sum(f**2, axis=0)) if f.ndim == 4 else np.abs(f)
    if mask is not None:
        a = a[mask]
    if np.isinf(p):
        return float(a.max()) if a.size else 0.0
    return float((np.sum(a**p) * grid.cell_volume) ** (1.0 / p))


def _power_symbol(k: np.ndarray, gamma: float) -> np.ndarray:
    out = np.zeros_like(k)
    nz = k > 0
    out[nz] = k[nz] ** gamma
    return out


def fractional_laplacian(grid: TorusGrid, f: np.ndarray, gamma: float) -> np.ndarray:
    """``Lambda**gamma f``, i.e. the multiplier ``|xi|**gamma`` (``(-Delta)**s`` is ``gamma = 2s``).

    The zero mode is mapped to zero for every ``gamma``; ``gamma < -1`` is rejected.
    """
    if gamma < -1:
        raise ValueError(f"order {gamma} < -1 is not supported")
    if gamma == 0:
        return grid.check(f).copy()
    return apply_multiplier(grid, f, _power_symbol(grid.kmag, gamma))


def riesz_symbol(grid: TorusGrid, j: int) -> np.ndarray:
    if j not in (1, 2, 3):
        raise ValueError(f"Riesz index must be 1, 2 or 3, got {j}")
    k = grid.wavevector_odd[j - 1]
    kk = grid.kmag
    out = np.zeros(np.broadcast_shapes(k.shape, kk.shape), dtype=complex)
    nz = kk > 0
    out[nz] = -1j * np.broadcast_to(k, kk.shape)[nz] / kk[nz]
    return out


def riesz_transform(grid: TorusGrid, f: np.ndarray, j: int) -> np.ndarray:
    """``R_j f`` with symbol ``-i xi_j / |xi|``."""
    return apply_multiplier(grid, f, riesz_symbol(grid, j))


def gradient(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """Spectral gradient; a scalar gives shape ``(3, n, n, n)``, a vector ``(3, 3, n, n, n)`` with derivative index first."""
    f = grid.check(f)
    fh = sfft.rfftn(f, axes=AXES, workers=fft_workers())
    return np.stack([
        sfft.irfftn(1j * k * fh, s=grid.shape, axes=AXES, workers=fft_workers())
        for k in grid.wavevector_odd
    ])


def divergence(grid: TorusGrid, v: np.ndarray) -> np.ndarray:
    v = grid.check(v)
    vh = sfft.rfftn(v, axes=AXES, workers=fft_workers())
    k1, k2, k3 = grid.wavevector_odd
    dh = 1j * (k1 * vh[0] + k2 * vh[1] + k3 * vh[2])
    return sfft.irfftn(dh, s=grid.shape, axes=AXES, workers=fft_workers())


def derivative_tensor(grid: TorusGrid, f: np.ndarray, order: int) -> np.ndarray:
    """All ``order``-th partial derivatives stacked on leading axes."""
    out = grid.check(f)
    for _ in range(order):
        out = gradient(grid, out)
    return out


def pointwise_norm(a: np.ndarray, ndim: int = 3) -> np.ndarray:
    """Euclidean (Frobenius) magnitude over all leading component axes."""
    lead = tuple(range(a.ndim - ndim))
    if not lead:
        return np.abs(a)
    return np.sqrt(np.sum(a**2, axis=lead))


# Littlewood-Paley projections --------------------------------------------

def lp_bump(r: np.ndarray) -> np.ndarray:
    """Radial cutoff: 1 on ``r <= 1``, 0 on ``r >= 2``, and on ``1 < r < 2``

        rho(r) = g(2 - r) / (g(2 - r) + g(r - 1)),   g(t) = exp(-1/t).
    """
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    out[r <= 1] = 1.0
    mid = (r > 1) & (r < 2)
    a = np.exp(-1.0 / (2.0 - r[mid]))
    b = np.exp(-1.0 / (r[mid] - 1.0))
    out[mid] = a / (a + b)
    return out


def lp_symbol(grid: TorusGrid, j: int, kind: str = "block") -> np.ndarray:
    low = lp_bump(grid.kmag / 2.0**j)
    if kind == "low":
        return low
    if kind == "high":
        return 1.0 - low
    if kind == "block":
        return low - lp_bump(grid.kmag / 2.0 ** (j - 1))
    raise ValueError(f"kind must be 'block', 'low' or 'high', got {kind!r}")


def littlewood_paley(grid: TorusGrid, f: np.ndarray, j: int, kind: str = "block") -> np.ndarray:
    """``P_j f`` (``kind='block'``), ``P_{<=j} f`` (``'low'``) or ``P_{>j} f`` (``'high'``)."""
    return apply_multiplier(grid, f, lp_symbol(grid, j, kind))


# Fractional heat semigroup ------------------------------------------------

def heat_symbol(grid: TorusGrid, t: float, s: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    return np.exp(-t * grid.kmag ** (2 * s))


def fractional_heat(grid: TorusGrid, f: np.ndarray, t: float, s: float) -> np.ndarray:
    """``exp(-t (-Delta)**s) f``."""
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if t == 0:
        return grid.check(f).copy()
    return apply_multiplier(grid, f, heat_symbol(grid, t, s))


def heat_smoothing_kernel(grid: TorusGrid, alpha: float, t: float, s: float) -> np.ndarray:
    """Kernel of ``Lambda**alpha exp(-t (-Delta)**s)`` centred at the origin."""
    symbol = _power_symbol(grid.kmag, alpha) * heat_symbol(grid, t, s)
    return sfft.irfftn(symbol, s=grid.shape, workers=fft_workers()) / grid.cell_volume


def heat_extremal_input(grid: TorusGrid, alpha: float, t: float, s: float) -> np.ndarray:
    """Sign pattern ``f`` with ``||f||_inf = 1`` attaining the L^inf -> L^inf norm at ``x = 0``."""
    K = heat_smoothing_kernel(grid, alpha, t, s)
    # (K * f)(0) = sum_y K(-y) f(y)
    return np.sign(np.roll(K[::-1, ::-1, ::-1], 1, axis=(0, 1, 2)))


def heat_smoothing_ratio(grid: TorusGrid, f: np.ndarray, alpha: float, t: float, s: float) -> float:
    """``||Lambda**alpha e^{-t(-Delta)^s} f||_inf / ||f||_inf``."""
    g = apply_multiplier(grid, f, _power_symbol(grid.kmag, alpha) * heat_symbol(grid, t, s))
    den = np.max(np.abs(f))
    return float(np.max(np.abs(g)) / den) if den > 0 else 0.0


def fitted_log_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# Sobolev-Slobodeckij seminorms --------------------------------------------

def slobodeckij_constant(gamma: float) -> float:
    """``c(gamma) = int 2 (1 - cos z_1) |z|**(-3 - 2 gamma) dz`` in three dimensions.

    With it, ``[f]_{W^{gamma,2}}**2 = c(gamma) ||Lambda**gamma f||_2**2`` on R^3.
    """
    return 2.0 * np.pi**1.5 * special.gamma(1 - gamma) / (gamma * 4.0**gamma * special.gamma(1.5 + gamma))


def diagonal_bound(grid: TorusGrid, f: np.ndarray, gamma: float) -> float:
    """Leading-order size of the excluded diagonal ``|x - y| < h`` for ``p = 2``.

    For smooth ``f``, ``|f(x) - f(y)|**2 ~ |grad f . (y - x)|**2``, and integrating
    over a ball of radius ``h`` gives ``(4 pi / 3) h**(2 - 2 gamma) / (2 - 2 gamma) ||grad f||_2**2``.
    """
    g2 = np.sum(gradient(grid, f) ** 2) * grid.cell_volume
    return float(4 * np.pi / 3 * grid.h ** (2 - 2 * gamma) / (2 - 2 * gamma) * g2)


def _periodic_weight(grid: TorusGrid, exponent: float, images: int = 2) -> np.ndarray:
    """``sum_m |z + m L|**(-exponent)`` over image boxes ``|m_i| <= images``; ``z = 0`` excluded."""
    d = grid.centered_offsets((0.0, 0.0, 0.0))
    w = np.zeros(grid.shape)
    rng = range(-images, images + 1)
    for m1 in rng:
        for m2 in rng:
            for m3 in rng:
                r2 = (d[0] + m1 * grid.L) ** 2 + (d[1] + m2 * grid.L) ** 2 + (d[2] + m3 * grid.L) ** 2
                if m1 == m2 == m3 == 0:
                    r2 = r2.copy()
                    r2[0, 0, 0] = np.inf
                w += r2 ** (-exponent / 2)
    return w


def slobodeckij_seminorm(
    grid: TorusGrid,
    f: np.ndarray,
    gamma: float,
    p: float = 2.0,
    center=None,
    radius: float | None = None,
    images: int = 2,
) -> float:
    """Midpoint-rule value of ``int int |f(x) - f(y)|**p / |x - y|**(3 + gamma p) dx dy``.

    With ``radius=None`` the outer integral runs over one period cell and the
    inner one over R^3 (periodic images summed up to ``images`` boxes, farther
    ones added in the mean-field approximation); only ``p = 2`` is supported in
    that mode.  With a ball ``B(center, radius)`` both integrals run over the
    ball, which must leave a margin of at least its diameter inside the cell.
    Pairs closer than one grid spacing are excluded (see :func:`diagonal_bound`).
    Vector fields use the Euclidean norm of the difference.
    """
    f = grid.check(f)
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if p < 1:
        raise ValueError("p must be >= 1")
    hv = grid.cell_volume
    if radius is None:
        if p != 2:
            raise ValueError("full-cell seminorm supports p = 2 only")
        comps = f.reshape((-1,) + grid.shape)
        total = 0.0
        w = _periodic_weight(grid, 3 + 2 * gamma, images)
        far = 4 * np.pi * ((images + 0.5) * grid.L) ** (-2 * gamma) / (2 * gamma)
        for c in comps:
            ch = sfft.rfftn(c, workers=fft_workers())
            corr = sfft.irfftn(np.abs(ch) ** 2, s=grid.shape, workers=fft_workers()) * hv
            norm2 = np.sum(c**2) * hv
            D = 2 * norm2 - 2 * corr
            D[0, 0, 0] = 0.0
            # mean-field tail beyond the image boxes: D averages to 2 ||f - mean||^2
            total += np.sum(D * w) * hv + 2 * (norm2 - np.sum(c) ** 2 * hv**2 / grid.volume) * far
        return float(total)

    if radius + 2 * radius > grid.L / 2:
        raise ValueError(f"ball radius {radius} too large for box length {grid.L}")
    mask = grid.distance(center) < radius
    d = grid.centered_offsets(center)
    pts = np.stack([np.broadcast_to(di, grid.shape)[mask] for di in d], axis=1)
    vals = f[..., mask].reshape(-1, pts.shape[0]).T
    total = 0.0
    chunk = max(1, 2_000_000 // max(1, pts.shape[0]))
    for i in range(0, pts.shape[0], chunk):
        dx = pts[i:i + chunk, None, :] - pts[None, :, :]
        r = np.sqrt(np.sum(dx**2, axis=-1))
        df = np.sqrt(np.sum((vals[i:i + chunk, None, :] - vals[None, :, :]) ** 2, axis=-1))
        ok = r > 0.5 * grid.h
        total += np.sum(df[ok] ** p / r[ok] ** (3 + gamma * p))
    return float(total * hv * hv)


# Products and Leibniz diagnostics -----------------------------------------

def _pad_real(grid: TorusGrid, f: np.ndarray, m: int) -> np.ndarray:
    """Sample the trigonometric interpolant of ``f`` (Nyquist dropped) on an ``m``-point grid."""
    n = grid.n
    fh = sfft.rfftn(f, axes=AXES, workers=fft_workers())
    out = np.zeros(fh.shape[:-3] + (m, m, m // 2 + 1), dtype=complex)
    idx = _index_map(n)
    keep = np.abs(idx) < n // 2  # Nyquist dropped to keep the padded field real
    ii = idx[keep] % m
    half = n // 2
    sub = fh[..., keep, :, :][..., :, keep, :][..., :, :, :half]
    out[..., ii[:, None, None], ii[None, :, None], np.arange(half)[None, None, :]] = sub
    return sfft.irfftn(out, s=(m, m, m), axes=AXES, workers=fft_workers()) * (m / n) ** 3


def _truncate_real(grid: TorusGrid, fp: np.ndarray, m: int) -> np.ndarray:
    n = grid.n
    ph = sfft.rfftn(fp, axes=AXES, workers=fft_workers())
    idx = _index_map(n)
    keep = np.abs(idx) < n // 2
    ii = idx[keep] % m
    half = n // 2
    out = np.zeros(fp.shape[:-3] + (n, n, half + 1), dtype=complex)
    pos = np.nonzero(keep)[0]
    out[..., pos[:, None, None], pos[None, :, None], np.arange(half)[None, None, :]] = \
        ph[..., ii[:, None, None], ii[None, :, None], np.arange(half)[None, None, :]]
    return sfft.irfftn(out, s=(n, n, n), axes=AXES, workers=fft_workers()) * (n / m) ** 3


def padded_size(n: int) -> int:
    m = 3 * n // 2
    return m + (m % 2)


def dealiased_product(grid: TorusGrid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise product computed on a 3/2-padded grid and truncated back (no aliasing)."""
    a = grid.check(a)
    b = grid.check(b)
    m = padded_size(grid.n)
    return _truncate_real(grid, _pad_real(grid, a, m) * _pad_real(grid, b, m), m)


def _index_map(n: int) -> np.ndarray:
    return sfft.fftfreq(n, 1.0 / n).astype(int)


def fractional_leibniz_check(
    grid: TorusGrid, f: np.ndarray, g: np.ndarray, alpha: float,
    r: float, p1: float, q1: float, p2: float, q2: float,
) -> float:
    """``||Lambda^a(fg)||_r / (||Lambda^a f||_p1 ||g||_q1 + ||f||_p2 ||Lambda^a g||_q2)``.

    Exponents must satisfy ``1/r = 1/p1 + 1/q1 = 1/p2 + 1/q2``.  A vanishing
    numerator gives 0 regardless of the denominator.
    """
    inv = lambda x: 0.0 if np.isinf(x) else 1.0 / x  # noqa: E731
    if not (np.isclose(inv(r), inv(p1) + inv(q1)) and np.isclose(inv(r), inv(p2) + inv(q2))):
        raise ValueError("exponents violate 1/r = 1/p1 + 1/q1 = 1/p2 + 1/q2")
    if r < 1 or min(p1, q1, p2, q2) <= 1:
        raise ValueError("need r >= 1 and p_i, q_i > 1")
    fg = dealiased_product(grid, f, g)
    num = lp_norm(grid, fractional_laplacian(grid, fg, alpha), r)
    if num == 0.0:
        return 0.0
    laf = fractional_laplacian(grid, f, alpha)
    lag = fractional_laplacian(grid, g, alpha)
    den = lp_norm(grid, laf, p1) * lp_norm(grid, g, q1) + lp_norm(grid, f, p2) * lp_norm(grid, lag, q2)
    return float(num / den) if den > 0 else 0.0
