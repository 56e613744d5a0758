"""Pressure recovery and pressure estimates.

The pressure solves ``-Delta p = d_i d_j (u_i u_j)``, i.e.

    p_hat(xi) = -(xi_i xi_j / |xi|**2) (u_i u_j)^(xi),

with the products computed on a 3/2-padded grid so that band-limited
velocities give an alias-free pressure.  The zero mode of ``p`` is zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import bump, smooth_cutoff
from .maximal import TestFunctionFamily, grand_max_approx, hermite_gaussian_family
from .spectral import (
    TorusGrid,
    _pad_real,
    _truncate_real,
    divergence,
    forward,
    fractional_laplacian,
    gradient,
    inverse,
    lp_norm,
    padded_size,
    pointwise_norm,
    riesz_transform,
)


class DivergenceError(ValueError):
    """The velocity is not divergence-free to the requested tolerance."""


@dataclass(frozen=True)
class PressurePair:
    p: np.ndarray
    gradient: np.ndarray
    residual: float


def _check_solenoidal(grid: TorusGrid, u: np.ndarray, tol: float) -> None:
    scale = np.max(np.abs(gradient(grid, u)))
    if scale == 0:
        return
    if np.max(np.abs(divergence(grid, u))) > tol * scale:
        raise DivergenceError("velocity is not divergence-free")


def inverse_laplacian(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """``(-Delta)**-1 f`` with the zero mode dropped."""
    k2 = grid.kmag**2
    sym = np.zeros_like(k2)
    sym[k2 > 0] = 1.0 / k2[k2 > 0]
    return inverse(grid, forward(grid, f) * sym)


def stress(grid: TorusGrid, u: np.ndarray) -> np.ndarray:
    """Symmetric tensor ``u_i u_j`` (alias-free), shape ``(3, 3) + grid.shape``."""
    m = padded_size(grid.n)
    up = _pad_real(grid, grid.check(u), m)
    T = np.empty((3, 3) + grid.shape)
    for i in range(3):
        for j in range(i, 3):
            T[i, j] = _truncate_real(grid, up[i] * up[j], m)
            T[j, i] = T[i, j]
    return T


def double_divergence_solve(grid: TorusGrid, T: np.ndarray) -> np.ndarray:
    """``(-Delta)**-1 d_i d_j T_ij``; symbol ``-xi_i xi_j / |xi|**2``."""
    k = grid.wavevector_odd
    kk2 = grid.kmag**2
    out = np.zeros(kk2.shape, dtype=complex)
    for i in range(3):
        for j in range(3):
            out += -k[i] * k[j] * forward(grid, T[i, j])
    nz = kk2 > 0
    out[nz] /= kk2[nz]
    out[~nz] = 0.0
    return inverse(grid, out)


def solve_pressure(grid: TorusGrid, u: np.ndarray, div_tol: float = 1e-10) -> PressurePair:
    """Pressure of a divergence-free velocity, with the Poisson residual.

    The residual is ``max |-Delta p - d_i d_j (u_i u_j)|`` divided by the
    maximum of the right-hand side.
    """
    u = grid.check(u)
    _check_solenoidal(grid, u, div_tol)
    T = stress(grid, u)
    p = double_divergence_solve(grid, T)
    rhs = np.zeros(grid.kmag.shape, dtype=complex)
    k = grid.wavevector_odd
    for i in range(3):
        for j in range(3):
            rhs += -k[i] * k[j] * forward(grid, T[i, j])
    rhs[0, 0, 0] = 0
    lhs = forward(grid, p) * grid.kmag**2
    r = inverse(grid, lhs - rhs)
    scale = np.max(np.abs(inverse(grid, rhs)))
    residual = float(np.max(np.abs(r)) / scale) if scale > 0 else 0.0
    return PressurePair(p, gradient(grid, p), residual)


def riesz_power(grid: TorusGrid, f: np.ndarray, n: int) -> np.ndarray:
    """All ``R_{j1} ... R_{jn} f`` stacked on leading axes (rank-``n`` tensor)."""
    if n < 0:
        raise ValueError("Riesz power must be non-negative")
    out = grid.check(f)
    for _ in range(n):
        out = np.stack([riesz_transform(grid, out, j) for j in (1, 2, 3)])
    return out


def pressure_hardy_ratio(grid: TorusGrid, u: np.ndarray, n: int, s: float) -> float:
    """``||R**n (-Delta)**s p||_1 / ||Lambda**s u||_2**2`` (tensor Frobenius norm)."""
    den = lp_norm(grid, fractional_laplacian(grid, u, s), 2) ** 2
    if den == 0:
        return 0.0
    p = solve_pressure(grid, u).p
    q = riesz_power(grid, fractional_laplacian(grid, p, 2 * s), n)
    num = np.sum(pointwise_norm(q)) * grid.cell_volume
    return float(num / den)


def pressure_cz_ratio(grid: TorusGrid, u: np.ndarray) -> float:
    """``||p||_{3/2} / ||u||_3**2`` (Calderon-Zygmund sanity check)."""
    den = lp_norm(grid, u, 3) ** 2
    if den == 0:
        return 0.0
    return lp_norm(grid, solve_pressure(grid, u).p, 1.5) / den


def decay_check(
    grid: TorusGrid, g: np.ndarray, s: float, n: int, eta: float,
    radii=None, center=None,
) -> float:
    """``max_x |R**n Lambda**(2s) g(x)| (1 + |x - c|)**(3 + eta)`` over probe shells.

    The shells are ``[r_k, r_{k+1})`` for the given radii (default: dyadic
    from ``h`` to ``L/4``); radii beyond ``L/4`` are rejected because periodic
    images dominate there.
    """
    if not 0 < eta < 2 * s:
        raise ValueError("eta must lie in (0, 2s)")
    if radii is None:
        radii = [0.0]
        r = grid.h
        while r <= grid.L / 4 + 1e-12:
            radii.append(r)
            r *= 2
    radii = np.asarray(radii, dtype=float)
    if radii.max() > grid.L / 4 + 1e-12:
        raise ValueError(f"probe radius {radii.max()} beyond L/4")
    q = pointwise_norm(riesz_power(grid, fractional_laplacian(grid, g, 2 * s), n))
    d = grid.distance(center)
    weighted = q * (1 + d) ** (3 + eta)
    best = 0.0
    for lo, hi in zip(radii[:-1], radii[1:]):
        shell = (d >= lo) & (d < hi)
        if shell.any():
            best = max(best, float(weighted[shell].max()))
    return best


# Localization ---------------------------------------------------------------

@dataclass(frozen=True)
class LocalizedPressure:
    riesz_part: np.ndarray
    remainder: np.ndarray
    remainder_norms: tuple
    bound_constants: tuple
    reconstruction_error: float


def _winf(grid: TorusGrid, f: np.ndarray, k: int) -> float:
    """``max_{j <= k} max |grad**j f|`` on the grid (spectral derivatives)."""
    total = 0.0
    d = f
    for j in range(k + 1):
        if j:
            d = gradient(grid, d)
        total += float(np.max(pointwise_norm(d)))
    return total


def localize_pressure(
    grid: TorusGrid, p: np.ndarray, u: np.ndarray, phi: np.ndarray, phibar: np.ndarray,
    ball_mask: np.ndarray | None = None, kmax: int = 2, nest_tol: float = 1e-10,
) -> LocalizedPressure:
    """Split ``phi grad p = phi grad R_ij(u_i u_j phibar) + Gamma``.

    ``Gamma = phi grad(p_1 + p_2)`` is built independently of ``p``'s
    identity from

        p_1 = -2 (-Delta)^-1 d_i (u_i u_j d_j phibar) + (-Delta)^-1 (u_i u_j d_ij phibar)
        p_2 = -2 (-Delta)^-1 div(p grad phibar) + (-Delta)^-1 (p Delta phibar),

    which follows from expanding ``-Delta(p phibar)``.  The reconstruction
    error ``max |phi grad p - (riesz part + Gamma)|`` is returned relative to
    ``max |phi grad p|``.  ``ball_mask`` (default: ``phibar > 0``) is the set
    on which ``||u||_inf**2 + ||p||_1`` is measured for the bound constants.
    """
    p = grid.check(p)
    u = grid.check(u)
    if np.any((phi != 0) & (np.abs(phibar - 1) > nest_tol)):
        raise ValueError("cutoff nesting violated: supp(phi) must lie in {phibar = 1}")
    T = np.einsum("i...,j...->ij...", u, u)
    dphibar = gradient(grid, phibar)
    d2phibar = gradient(grid, dphibar)
    lap_phibar = d2phibar[0, 0] + d2phibar[1, 1] + d2phibar[2, 2]
    R = double_divergence_solve(grid, T * phibar)
    flux = np.einsum("ij...,j...->i...", T, dphibar)
    p1 = -2 * inverse_laplacian(grid, divergence(grid, flux)) + inverse_laplacian(
        grid, np.einsum("ij...,ij...->...", T, d2phibar))
    p2 = -2 * inverse_laplacian(grid, divergence(grid, p * dphibar)) + inverse_laplacian(grid, p * lap_phibar)
    riesz_part = phi * gradient(grid, R)
    remainder = phi * gradient(grid, p1 + p2)
    target = phi * gradient(grid, p)
    scale = np.max(np.abs(target))
    err = float(np.max(np.abs(target - riesz_part - remainder)))
    err = err / scale if scale > 0 else err
    mask = phibar > 0 if ball_mask is None else ball_mask
    budget = float(np.max(pointwise_norm(u)[mask]) ** 2 + np.sum(np.abs(p[mask])) * grid.cell_volume)
    norms = tuple(_winf(grid, remainder, k) for k in range(kmax + 1))
    consts = tuple(nv / budget if budget > 0 else 0.0 for nv in norms)
    return LocalizedPressure(riesz_part, remainder, norms, consts, err)


# Pressure Poincare inequality -------------------------------------------------

OUTER_FRACTION = 0.22
RADII = (1.0, 1.25, 3.0, 5.0)  # psi support, oscillation ball, grand-max ball, outer ball


def poincare_balls(grid: TorusGrid) -> dict:
    """Radii of the concentric balls scaled so that the outer one is ``0.22 L``."""
    unit = OUTER_FRACTION * grid.L / RADII[-1]
    return {"psi": RADII[0] * unit, "oscillation": RADII[1] * unit,
            "maximal": RADII[2] * unit, "outer": RADII[3] * unit}


def psi_weight(grid: TorusGrid, radius: float, center=None) -> np.ndarray:
    """Sampled bump supported in ``B(center, radius)`` with discrete mass one."""
    w = bump(grid.distance(center) / radius)
    return w / (np.sum(w) * grid.cell_volume)


def poincare_pressure_ratio(
    grid: TorusGrid, g: np.ndarray, s: float, family: TestFunctionFamily | None = None,
    center=None, psi: np.ndarray | None = None,
) -> float:
    """``||g - (g)_psi||_{6/5, B_5/4} / (||Lambda**(2s-1) g||_{1, B_5} + ||M_4(Lambda**(2s-1) g)||_{1, B_3})``.

    ``M_4`` is the finite-family proxy :func:`grand_max_approx` (a lower bound),
    so the ratio over-estimates the true one.  A zero numerator gives 0.
    """
    g = grid.check(g)
    balls = poincare_balls(grid)
    family = hermite_gaussian_family() if family is None else family
    psi = psi_weight(grid, balls["psi"], center) if psi is None else psi
    d = grid.distance(center)
    mean = np.sum(g * psi, axis=(-3, -2, -1)) * grid.cell_volume
    osc = g - np.reshape(mean, np.shape(mean) + (1, 1, 1))
    num = lp_norm(grid, osc, 6 / 5, mask=d < balls["oscillation"])
    if num <= 1e-14 * max(1.0, float(np.max(np.abs(g)))):
        return 0.0
    h = fractional_laplacian(grid, g, 2 * s - 1)
    gm = grand_max_approx(grid, h, family)
    den = lp_norm(grid, h, 1, mask=d < balls["outer"]) + float(np.sum(gm[d < balls["maximal"]]) * grid.cell_volume)
    return float(num / den) if den > 0 else np.inf


def default_cutoffs(grid: TorusGrid, center=None) -> tuple[np.ndarray, np.ndarray]:
    """Nested cutoffs with ``supp phi`` inside ``{phibar = 1}`` and ``supp phibar`` in ``B_{L/4}``."""
    d = grid.distance(center)
    L = grid.L
    phi = smooth_cutoff(d, L / 24, L / 12)
    phibar = smooth_cutoff(d, L / 10, L / 4.2)
    return phi, phibar
