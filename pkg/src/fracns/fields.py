"""Test-field generators, cutoffs and the mollifier bump.

Everything here returns plain arrays sampled on a :class:`TorusGrid`.
Random generators take an explicit ``numpy.random.Generator`` so that every
ensemble is reproducible from a seed.
"""
from __future__ import annotations

import numpy as np
from scipy import fft as sfft
from scipy import special

from .spectral import TorusGrid, fft_workers, forward, gradient, inverse


def integer_modes(kmax: int, kmin: int = 1) -> np.ndarray:
    """All integer triples ``m`` with ``kmin <= |m| <= kmax``, half-space only (one of each ``+-m`` pair)."""
    r = np.arange(-kmax, kmax + 1)
    m = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    norm = np.sqrt(np.sum(m**2, axis=1))
    m = m[(norm >= kmin) & (norm <= kmax)]
    # keep the lexicographically positive representative of each +-m pair
    key = m[:, 0] * (4 * kmax + 3) ** 2 + m[:, 1] * (4 * kmax + 3) + m[:, 2]
    return m[key > 0]


def random_trig_polynomial(
    grid: TorusGrid, rng: np.random.Generator, kmax: float, kmin: float = 1.0,
    components: int = 1, decay: float = 0.0,
) -> np.ndarray:
    """Real trigonometric polynomial with Gaussian coefficients on ``kmin <= |m| <= kmax``.

    The wavevectors are ``2 pi m / L``; amplitudes scale as ``|m|**(-decay)``.
    The result does not depend on ``grid.n`` beyond sampling, so the same seed
    gives the same continuum function at every resolution.
    """
    modes = integer_modes(int(np.floor(kmax)), 0)
    norm = np.sqrt(np.sum(modes**2, axis=1))
    keep = (norm >= kmin) & (norm <= kmax)
    if np.any(np.abs(modes) >= grid.n // 2):
        raise ValueError(f"kmax={kmax} not resolved on n={grid.n}")
    n = grid.n
    idx = modes % n
    out = np.empty((components,) + grid.shape)
    for c in range(components):
        a = rng.standard_normal(len(modes))
        b = rng.standard_normal(len(modes))
        coef = np.where(keep, norm ** (-decay) * (a - 1j * b) / 2, 0.0)
        spec = np.zeros(grid.shape, dtype=complex)
        # a cos(k.x) + b sin(k.x) = Re((a - i b) e^{i k.x}); place the pair +-m
        np.add.at(spec, (idx[:, 0], idx[:, 1], idx[:, 2]), coef)
        np.add.at(spec, (-idx[:, 0] % n, -idx[:, 1] % n, -idx[:, 2] % n), np.conj(coef))
        out[c] = sfft.ifftn(spec, workers=fft_workers()).real * n**3
    return out[0] if components == 1 else out


def gaussian_envelope(grid: TorusGrid, sigma: float, center=None) -> np.ndarray:
    """``exp(-|x - center|**2 / (2 sigma**2))`` with periodic distance."""
    r = grid.distance(center)
    return np.exp(-0.5 * (r / sigma) ** 2)


def curl(grid: TorusGrid, A: np.ndarray) -> np.ndarray:
    g = gradient(grid, A)  # g[i, j] = d_i A_j
    return np.stack([g[1, 2] - g[2, 1], g[2, 0] - g[0, 2], g[0, 1] - g[1, 0]])


def localized_velocity(
    grid: TorusGrid, rng: np.random.Generator, sigma: float | None = None,
    kmax: float = 3.0, center=None,
) -> np.ndarray:
    """Divergence-free field ``curl(G A)`` with ``G`` a Gaussian envelope and ``A`` a random trig polynomial.

    With ``sigma = L/16`` (default) the field is concentrated in the central
    part of the cell and well resolved from ``n = 32`` upward.
    """
    sigma = grid.L / 16 if sigma is None else sigma
    A = random_trig_polynomial(grid, rng, kmax, components=3)
    return curl(grid, gaussian_envelope(grid, sigma, center) * A)


def band_limit(grid: TorusGrid, f: np.ndarray, radius: float) -> np.ndarray:
    """Sharp spectral truncation to ``|xi| <= radius``."""
    fh = forward(grid, f)
    return inverse(grid, fh * (grid.kmag <= radius))


def smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    a = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.maximum(1 - t, 1e-300)), 0.0)
    return a / (a + b)


def smooth_cutoff(r: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """Radial C-infinity cutoff equal to 1 on ``r <= inner`` and 0 on ``r >= outer``."""
    return 1.0 - smooth_step((np.asarray(r) - inner) / (outer - inner))


def cutoff_field(grid: TorusGrid, inner: float, outer: float, center=None) -> np.ndarray:
    return smooth_cutoff(grid.distance(center), inner, outer)


BUMP_POWER = 6


def bump_normalization(m: int = BUMP_POWER) -> float:
    """``int_{B_1} (1 - |x|**2)**m dx = pi**(3/2) Gamma(m+1) / Gamma(m+5/2)``."""
    return float(np.pi**1.5 * special.gamma(m + 1) / special.gamma(m + 2.5))


def bump(r: np.ndarray, m: int = BUMP_POWER) -> np.ndarray:
    """Unit-mass radial bump ``(1 - r**2)**m_+`` supported in the unit ball.

    It is ``C^{m-1}``, which is enough for the second-derivative estimates of
    the mollified velocity, and its Fourier transform is known in closed form
    (:func:`bump_fourier`).
    """
    r = np.asarray(r, dtype=float)
    return np.where(r < 1, np.clip(1 - r**2, 0, None) ** m, 0.0) / bump_normalization(m)


def bump_fourier(k: np.ndarray, m: int = BUMP_POWER) -> np.ndarray:
    """Fourier transform of :func:`bump`: ``Gamma(m+5/2) 2**(m+3/2) J_{m+3/2}(k) / k**(m+3/2)``."""
    k = np.asarray(k, dtype=float)
    nu = m + 1.5
    out = np.ones_like(k)
    nz = k > 1e-8
    kk = k[nz]
    out[nz] = special.gamma(nu + 1) * 2**nu * special.jv(nu, kk) / kk**nu
    small = ~nz
    out[small] = 1.0 - k[small] ** 2 / (4 * (nu + 1))
    return out


def mollify(grid: TorusGrid, f: np.ndarray, r: float, m: int = BUMP_POWER) -> np.ndarray:
    """``psi_r * f`` with ``psi_r(x) = r**-3 psi(x / r)``, computed with the exact symbol."""
    if r <= 0:
        return np.asarray(f, dtype=float).copy()
    fh = forward(grid, f)
    return inverse(grid, fh * bump_fourier(grid.kmag * r, m))


def erf_cutoff(r: np.ndarray, radius: float, width: float) -> np.ndarray:
    """Radial cutoff ``erfc((r - radius)/width)/2``.

    Not compactly supported, but its spectrum is Gaussian, so products with it
    are resolved to round-off once ``width`` spans a few grid cells; it equals
    1 (resp. 0) to within ``1e-10`` at ``radius -+ 4.6 width``.
    """
    return 0.5 * special.erfc((np.asarray(r, dtype=float) - radius) / width)
