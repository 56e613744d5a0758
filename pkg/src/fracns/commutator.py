"""Commutators ``[Lambda**beta, phi] G`` and their singular-integral decomposition.

For ``beta`` in ``(0, 2)`` the operator ``Lambda**beta`` has the kernel form

    Lambda**beta f(x) = C_beta p.v. int (f(x) - f(y)) |x - y|**-(3 + beta) dy,

so ``[Lambda**beta, phi] G(x) = C_beta p.v. int G(y) (phi(x) - phi(y)) |x - y|**-(3 + beta) dy``.
Splitting the kernel with a radial cutoff ``chi_rho`` (1 on ``B_rho``,
0 outside ``B_2rho``) gives four pieces:

* ``I_l1 = G(x) p.v. int (phi(x) - phi(y)) K_loc(x - y) dy``
* ``I_l2 = p.v. int (G(y) - G(x)) (phi(x) - phi(y)) K_loc(x - y) dy``
* ``I_t1 = phi(x) int G(y) K_tail(x - y) dy``
* ``I_t2 = - int G(y) phi(y) K_tail(x - y) dy``

with ``K_loc = chi_rho(|z|) |z|**-(3+beta)`` and ``K_tail = (1 - chi_rho(|z|)) |z|**-(3+beta)``,
all computed here with unit constant (``C_beta`` is applied separately).

The local integrals are evaluated by symmetric-shell quadrature: pairing
``y = x + r w`` with ``x - r w`` and averaging over the sphere turns
``f(x) - f(y)`` acting on a plane wave of frequency ``k`` into
``1 - sin(k r)/(k r)``, which removes the odd part of the singularity
exactly.  The remaining radial integral is done by Gauss-Legendre
quadrature after the substitution ``r = 2 rho t**q`` with ``q = 1/(2 - beta)``,
which makes the integrand smooth at ``r = 0``.  The tail kernel is
likewise reduced to a radial Fourier integral; its far part is done with
the oscillatory QAWF rule.  On the torus both kernels therefore act as exact
Fourier multipliers (their periodizations), and products are formed on a
grid refined by at least a factor two.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .extension import QuadratureError
from .fields import smooth_cutoff
from .maximal import hardy_littlewood_max
from .spectral import (
    TorusGrid,
    _pad_real,
    _truncate_real,
    dealiased_product,
    derivative_tensor,
    forward,
    fractional_laplacian,
    gradient,
    inverse,
    pointwise_norm,
)


def kernel_constant(beta: float) -> float:
    """``C_beta = 2**beta Gamma((3 + beta)/2) / (pi**(3/2) |Gamma(-beta/2)|)`` (closed form, used as an oracle)."""
    return float(2**beta * special.gamma((3 + beta) / 2) / (np.pi**1.5 * abs(special.gamma(-beta / 2))))


def spectral_commutator(grid: TorusGrid, phi: np.ndarray, v: np.ndarray, beta: float) -> np.ndarray:
    """``Lambda**beta (phi v) - phi Lambda**beta v`` with dealiased products."""
    if not 0.5 < beta < 2:
        raise ValueError("beta must lie in (1/2, 2)")
    phi = grid.check(phi)
    v = grid.check(v)
    if v.ndim == 4:
        return np.stack([spectral_commutator(grid, phi, c, beta) for c in v])
    return fractional_laplacian(grid, dealiased_product(grid, phi, v), beta) - \
        dealiased_product(grid, phi, fractional_laplacian(grid, v, beta))


# Cutoffs ------------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffPair:
    """``phi`` supported in ``B_R(center)`` and the radial kernel cutoff ``chi_rho``, ``rho = (R0 - R)/5``."""

    R: float
    R0: float
    center: tuple = (np.pi, np.pi, np.pi)
    inner_fraction: float = 0.5

    def __post_init__(self):
        if not 0 < self.R < self.R0:
            raise ValueError("need 0 < R < R0")
        if 2 * self.rho >= self.R:
            raise ValueError("need 2 rho < R (R0 < 7R/2)")

    @property
    def rho(self) -> float:
        return (self.R0 - self.R) / 5

    def check(self, grid: TorusGrid) -> None:
        if self.R0 >= grid.L / 2:
            raise ValueError("B_R0 must lie inside the period cell")

    def phi(self, grid: TorusGrid) -> np.ndarray:
        self.check(grid)
        return smooth_cutoff(grid.distance(self.center), self.inner_fraction * self.R, self.R)

    def chi(self, r) -> np.ndarray:
        """Radial profile ``chi_rho(r)``: 1 for ``r <= rho``, 0 for ``r >= 2 rho``."""
        return smooth_cutoff(np.asarray(r, dtype=float), self.rho, 2 * self.rho)


# Radial symbols -------------------------------------------------------------------------

def _sinc(x):
    return np.sinc(x / np.pi)


def _one_minus_sinc(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-2
    xs = x[small] ** 2
    out[small] = xs / 6 - xs**2 / 120 + xs**3 / 5040
    out[~small] = 1 - np.sin(x[~small]) / x[~small]
    return out


def _local_symbol_nodes(beta: float, rho: float, nodes: int, k: np.ndarray) -> np.ndarray:
    q = 1.0 / (2.0 - beta)
    x, w = np.polynomial.legendre.leggauss(nodes)
    t = (x + 1) / 2
    w = w / 2
    r = 2 * rho * t**q
    jac = 2 * rho * q * t ** (q - 1)
    chi = smooth_cutoff(r, rho, 2 * rho)
    weight = w * jac * chi * r ** (-1 - beta)
    out = np.empty(k.shape)
    step = max(1, 4_000_000 // nodes)
    for i in range(0, k.size, step):
        kk = k[i:i + step]
        out[i:i + step] = 4 * np.pi * (_one_minus_sinc(np.outer(kk, r)) @ weight)
    return out


def local_symbol(beta: float, rho: float, k, nodes: int = 1500, tol: float = 1e-10) -> np.ndarray:
    """``a(k) = 4 pi int_0^{2 rho} (1 - sinc(k r)) chi_rho(r) r**-(1+beta) dr``.

    Shell-averaged ``p.v. int (f(x) - f(x+z)) K_loc(z) dz`` on a plane wave of
    frequency ``k``.  Two node counts are compared; disagreement beyond
    ``tol`` (relative) raises :class:`QuadratureError`.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float)).ravel()
    a = _local_symbol_nodes(beta, rho, nodes, k)
    b = _local_symbol_nodes(beta, rho, 2 * nodes, k)
    scale = np.maximum(np.abs(b), 1e-300)
    if np.any(np.abs(a - b) > tol * scale + 1e-300):
        raise QuadratureError("local shell quadrature did not converge")
    return b


def _near_tail_nodes(beta: float, rho: float, nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    r = rho * (1.5 + 0.5 * x)
    return r, (1 - smooth_cutoff(r, rho, 2 * rho)) * r ** (-1 - beta) * w * rho / 2


def tail_mass(beta: float, rho: float, nodes: int = 200) -> float:
    """``int K_tail = 4 pi int_rho^inf (1 - chi_rho) r**-(1+beta) dr``."""
    _, wt = _near_tail_nodes(beta, rho, nodes)
    return float(4 * np.pi * (np.sum(wt) + (2 * rho) ** (-beta) / beta))


#: far-field switch: beyond ``x = FAR_SWITCH / k`` the integration-by-parts series is used
FAR_SWITCH = 40.0


def _far_sine_integral(nu: float, a: float, k: np.ndarray, panels: int, order: int) -> np.ndarray:
    """``int_a^inf x**-nu sin(k x) dx`` for every ``k > 0``.

    Geometric Gauss panels on ``[a, A]`` with ``A = max(a, FAR_SWITCH/k)`` and,
    beyond ``A``, the integration-by-parts expansion
    ``int_A^inf x**-nu e^{ikx} dx = -e^{ikA} sum_j (nu)_j A**-(nu+j) / (ik)**(j+1)``,
    whose terms shrink like ``(nu + j)/(k A)``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    out = np.zeros(k.shape)
    A = np.maximum(a, FAR_SWITCH / k)
    for i, (kk, AA) in enumerate(zip(k, A)):
        total = 0.0
        if AA > a:
            edges = np.geomspace(a, AA, panels + 1)
            lo, hi = edges[:-1, None], edges[1:, None]
            xx = lo + (hi - lo) * (x + 1) / 2
            total += float(np.sum((hi - lo) / 2 * w * xx ** (-nu) * np.sin(kk * xx)))
        term = AA ** (-nu) / (1j * kk)
        acc = 0j
        j = 0
        while True:
            acc += term
            term = term * (nu + j) / (AA * 1j * kk)
            j += 1
            if abs(term) < 1e-17 * abs(acc) or j > 60:
                break
        total += float((-np.exp(1j * kk * AA) * acc).imag)
        out[i] = total
    return out


def _tail_symbol_nodes(beta: float, rho: float, k: np.ndarray, nodes: int, panels: int) -> np.ndarray:
    r, wt = _near_tail_nodes(beta, rho, nodes)
    out = np.empty(k.shape)
    zero = k == 0
    out[zero] = tail_mass(beta, rho, nodes)
    kk = k[~zero]
    near = _sinc(np.outer(kk, r)) @ wt
    far = _far_sine_integral(2 + beta, 2 * rho, kk, panels, 16) / kk
    out[~zero] = 4 * np.pi * (near + far)
    return out


def tail_symbol(beta: float, rho: float, k, tol: float = 1e-10) -> np.ndarray:
    """``b(k) = 4 pi int_rho^inf (1 - chi_rho(r)) r**-(1+beta) sinc(k r) dr`` (Fourier transform of ``K_tail``).

    Evaluated twice with doubled node and panel counts; disagreement beyond
    ``tol`` relative to ``b(0)`` raises :class:`QuadratureError`.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float)).ravel()
    a = _tail_symbol_nodes(beta, rho, k, 200, 60)
    b = _tail_symbol_nodes(beta, rho, k, 400, 120)
    if np.any(np.abs(a - b) > tol * tail_mass(beta, rho)):
        raise QuadratureError("tail quadrature did not converge")
    return b


@lru_cache(maxsize=32)
def _symbol_tables(n: int, L: float, beta: float, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Both symbols on the rfft layout of an ``n``-grid, tabulated over the distinct ``|m|**2``."""
    grid = TorusGrid(n, L)
    m2 = np.rint((grid.kmag * L / (2 * np.pi)) ** 2).astype(np.int64)
    uniq, inv = np.unique(m2, return_inverse=True)
    k = 2 * np.pi / L * np.sqrt(uniq)
    a = local_symbol(beta, rho, k)
    b = tail_symbol(beta, rho, k)
    return a[inv].reshape(m2.shape), b[inv].reshape(m2.shape)


def symbols(grid: TorusGrid, beta: float, rho: float) -> tuple[np.ndarray, np.ndarray]:
    return _symbol_tables(grid.n, float(grid.L), float(beta), float(rho))


def calibrate_constant(beta: float, rho: float, k: float = 1.0) -> float:
    """Plane-wave calibration: ``C_beta = k**beta / (a(k) + |K_tail| - b(k))``.

    A plane wave of frequency ``k`` has ``Lambda**beta`` eigenvalue ``k**beta``
    while the unit-constant kernel split gives ``a(k) + (b(0) - b(k))``.
    """
    a = local_symbol(beta, rho, [k])[0]
    b0 = tail_mass(beta, rho)
    bk = tail_symbol(beta, rho, [k])[0]
    return float(k**beta / (a + b0 - bk))


# Four-piece decomposition ----------------------------------------------------------------

@dataclass(frozen=True)
class CommutatorPieces:
    l1: np.ndarray
    l2: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    constant: float

    @property
    def total(self) -> np.ndarray:
        """``C_beta (I_l1 + I_l2 + I_t1 + I_t2)``."""
        return self.constant * (self.l1 + self.l2 + self.t1 + self.t2)

    def as_dict(self) -> dict:
        return {"I_l1": self.l1, "I_l2": self.l2, "I_t1": self.t1, "I_t2": self.t2}


def decomposed_commutator(
    grid: TorusGrid, cutoffs: CutoffPair, G: np.ndarray, beta: float, refine: int = 2,
    phi: np.ndarray | None = None, constant: float | None = None, sampling: str = "spectral",
) -> CommutatorPieces:
    """The four pieces on the field grid (products formed on a ``refine``-times finer grid).

    ``phi`` defaults to ``cutoffs.phi(grid)``; ``constant`` defaults to the
    plane-wave calibration :func:`calibrate_constant`.

    ``sampling="spectral"`` projects each fine-grid piece back onto the field
    grid's Fourier modes, which is the right comparison with the spectral
    oracle. ``sampling="nodes"`` returns the fine-grid values at the field-grid
    nodes, i.e. point evaluations of the quadrature; use it for pointwise
    statements such as support, since projecting a localized product spreads
    Gibbs ripples across the cell.
    """
    if sampling not in ("spectral", "nodes"):
        raise ValueError("sampling must be 'spectral' or 'nodes'")
    if not 0.5 < beta < 2:
        raise ValueError("beta must lie in (1/2, 2)")
    if refine < 2:
        raise ValueError("quadrature refinement factor must be at least 2")
    cutoffs.check(grid)
    G = grid.check(G)
    phi = cutoffs.phi(grid) if phi is None else grid.check(phi)
    if G.ndim == 4:
        parts = [decomposed_commutator(grid, cutoffs, c, beta, refine, phi, constant, sampling) for c in G]
        return CommutatorPieces(*(np.stack([getattr(p, f) for p in parts]) for f in ("l1", "l2", "t1", "t2")),
                                parts[0].constant)
    m = refine * grid.n
    fine = TorusGrid(m, grid.L)
    a, b = symbols(fine, beta, cutoffs.rho)
    Gf = _pad_real(grid, G, m)
    pf = _pad_real(grid, phi, m)

    def A(f):
        return inverse(fine, forward(fine, f) * a)

    def B(f):
        return inverse(fine, forward(fine, f) * b)

    A_phi = A(pf)
    l1 = Gf * A_phi
    l2 = A(pf * Gf) - pf * A(Gf) - Gf * A_phi
    t1 = pf * B(Gf)
    t2 = -B(pf * Gf)
    if sampling == "nodes":
        back = [np.ascontiguousarray(x[::refine, ::refine, ::refine]) for x in (l1, l2, t1, t2)]
    else:
        back = [_truncate_real(grid, x, m) for x in (l1, l2, t1, t2)]
    C = calibrate_constant(beta, cutoffs.rho) if constant is None else constant
    return CommutatorPieces(*back, C)


def oracle_gap(grid: TorusGrid, cutoffs: CutoffPair, G: np.ndarray, beta: float, refine: int = 2) -> float:
    """Relative L2 gap between the calibrated four-piece sum and :func:`spectral_commutator`."""
    pieces = decomposed_commutator(grid, cutoffs, G, beta, refine)
    ref = spectral_commutator(grid, cutoffs.phi(grid), G, beta)
    den = np.sqrt(np.sum(ref**2))
    return float(np.sqrt(np.sum((pieces.total - ref) ** 2)) / den) if den > 0 else float(np.sqrt(np.sum(pieces.total**2)))


def tail_decay_profile(grid: TorusGrid, cutoffs: CutoffPair, G: np.ndarray, beta: float,
                       shells=None, width: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``max |I_t2|`` on shells ``|x - center| ~ r`` scaled by ``r**(3+beta) / ||G phi||_1``."""
    pieces = decomposed_commutator(grid, cutoffs, G, beta)
    d = grid.distance(cutoffs.center)
    shells = np.linspace(2 * cutoffs.R, 0.45 * grid.L, 5) if shells is None else np.asarray(shells, dtype=float)
    if np.any(shells < 2 * cutoffs.R):
        raise ValueError("decay shells must lie at distance >= 2R")
    width = grid.h if width is None else width
    mass = float(np.sum(np.abs(G * cutoffs.phi(grid))) * grid.cell_volume)
    out = []
    for r in shells:
        sel = np.abs(d - r) <= width / 2
        out.append(np.max(np.abs(pieces.t2[sel])) * r ** (3 + beta) / mass if mass > 0 else 0.0)
    return shells, np.asarray(out)


# Tail estimates ------------------------------------------------------------------------

TRICKS = ("trick1", "trick2")


def tail_integral(grid: TorusGrid, w: np.ndarray, beta: float, rho: float) -> np.ndarray:
    """``int w(y) (1 - chi_rho)(x - y) |x - y|**-(3+beta) dy`` (periodized, exact multiplier)."""
    _, b = symbols(grid, beta, rho)
    return inverse(grid, forward(grid, w) * b)


def winf_norm(grid: TorusGrid, f: np.ndarray, k: int, mask: np.ndarray) -> float:
    """``max_{m <= k} sup_mask |grad**m f|`` (pointwise Euclidean norm over the derivative tensor)."""
    best = 0.0
    for m in range(k + 1):
        d = f if m == 0 else derivative_tensor(grid, f, m)
        mag = pointwise_norm(d, ndim=3) if d.ndim > 3 else np.abs(d)
        best = max(best, float(np.max(mag[mask])))
    return best


def tail_trick_ratio(
    grid: TorusGrid, u: np.ndarray, cutoffs: CutoffPair, beta: float, s: float,
    variant: str = "trick1", k: int = 0, gamma: float | None = None,
) -> float:
    """Tail-integral ``W^{k,inf}(B_R)`` norm over the right side of the tail estimate.

    ``trick1`` integrates ``u`` and divides by ``||M(Lambda**s u)||_{L2(B_R)} + ||u||_{L1(B_R)}``;
    ``trick2`` integrates ``Lambda**gamma u`` (``gamma = 1``: the gradient)
    and divides by ``||M(Lambda**s u)||_{L2(B_R)}``.
    """
    if variant not in TRICKS:
        raise ValueError(f"unknown variant {variant!r}")
    if not beta > s:
        raise ValueError("need beta > s")
    if not 0 <= k <= 2:
        raise ValueError("k must be 0, 1 or 2")
    u = grid.check(u)
    cutoffs.check(grid)
    ball = grid.distance(cutoffs.center) < cutoffs.R
    if variant == "trick1":
        w = u
    else:
        if gamma is None or not 0 <= gamma - s < 1:
            raise ValueError("trick2 needs 0 <= gamma - s < 1")
        w = gradient(grid, u) if gamma == 1 else fractional_laplacian(grid, u, gamma)
    T = tail_integral(grid, w, beta, cutoffs.rho)
    num = winf_norm(grid, T, k, ball)
    Mu = hardy_littlewood_max(grid, fractional_laplacian(grid, u, s))
    den = float(np.sqrt(np.sum(Mu[ball] ** 2) * grid.cell_volume))
    if variant == "trick1":
        mag = pointwise_norm(u) if u.ndim == 4 else np.abs(u)
        den += float(np.sum(mag[ball]) * grid.cell_volume)
    if den == 0:
        return 0.0
    return num / den
