"""Fourier modal method for a slab perforated by a square lattice of round holes.

The slab sits in a homogeneous ambient medium and is invariant along ``z``.
Fields are expanded on the reciprocal lattice ``(m, n)``, ``|m|, |n| <= N``.
Lengths are normalised by the vacuum wavenumber ``k0`` inside the solver;
the time convention is ``exp(-i w t)``, so absorbing media have
``Im(n) >= 0``.

In-plane permittivity uses the normal-vector form of the inverse rule::

    eps_t = [[eps]] - ([[eps]] - [[1/eps]]^-1) N N^T

with ``N`` the radial unit field of the hole.  ``E_z`` is continuous across
the hole walls, so it uses the plain Laurent rule.
"""

from __future__ import annotations

import functools
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import scipy.linalg
import scipy.special

from .scattering import TwoPortScattering

__all__ = [
    "CrystalSpec",
    "PlaneWaveExcitation",
    "RcwaResult",
    "SingularBoundary",
    "NonConvergedWarning",
    "DiffractionWarning",
    "GridTooCoarse",
    "effective_epsilon",
    "fill_factor",
    "lattice_from_fill_factor",
    "epsilon_fourier",
    "solve",
    "band_map",
    "spectrum",
    "convolve_spectrometer",
    "DEFAULT_LATTICE",
]

# Lattice period reproducing eta = 30.6 % with r_h = 276 nm.
DEFAULT_LATTICE = 276e-9 * np.sqrt(np.pi / 0.306)
MIN_TRUNCATION = 3


class SingularBoundary(np.linalg.LinAlgError):
    """Boundary system is singular, e.g. exactly at a Rayleigh anomaly."""


class GridTooCoarse(ValueError):
    pass


class NonConvergedWarning(RuntimeWarning):
    pass


class DiffractionWarning(RuntimeWarning):
    """A non-zero diffraction order propagates in the ambient medium."""


IndexLike = float | complex | Callable[[float], complex]


@dataclass(frozen=True)
class CrystalSpec:
    lattice: float
    radius: float
    thickness: float
    n_slab: IndexLike = 2.0
    n_ambient: float = 1.0

    def __post_init__(self):
        if not (self.lattice > 0 and self.thickness > 0):
            raise ValueError("lattice and thickness must be positive")
        if not (0 <= 2 * self.radius < self.lattice * np.sqrt(2)):
            raise ValueError("hole radius out of range for the unit cell")

    def index(self, wavelength: float) -> complex:
        n = self.n_slab(wavelength) if callable(self.n_slab) else self.n_slab
        n = complex(n)
        if n.imag < 0:
            raise ValueError("Im(n) must be non-negative (passive slab)")
        return n


@dataclass(frozen=True)
class PlaneWaveExcitation:
    wavelength: float
    k_x: float = 0.0
    polarization: Literal["s", "p"] = "s"

    def __post_init__(self):
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.polarization not in ("s", "p"):
            raise ValueError("polarization must be 's' or 'p'")


@dataclass
class RcwaResult:
    S00: TwoPortScattering
    R_total: float
    T_total: float
    per_order_powers: dict = field(default_factory=dict)
    rcond: float = np.nan

    @property
    def absorption(self) -> float:
        return 1.0 - self.R_total - self.T_total


def effective_epsilon(eta: float, eps_air: float, eps_slab):
    if not 0 <= eta <= 1:
        raise ValueError("fill factor must lie in [0, 1]")
    return eta * eps_air + (1 - eta) * eps_slab


def fill_factor(spec: CrystalSpec) -> float:
    return np.pi * spec.radius**2 / spec.lattice**2


def lattice_from_fill_factor(radius: float, eta: float) -> float:
    return radius * np.sqrt(np.pi / eta)


def epsilon_fourier(spec: CrystalSpec, G, wavelength: float, *, inverse: bool = False):
    """Fourier coefficient of eps (or of 1/eps) at reciprocal vector(s) ``G``.

    ``G`` has shape ``(..., 2)`` in rad/m.
    """
    eps_slab = spec.index(wavelength) ** 2
    eps_air = spec.n_ambient**2
    if inverse:
        eps_slab, eps_air = 1.0 / eps_slab, 1.0 / eps_air
    return _hole_coefficients(np.linalg.norm(np.asarray(G, float), axis=-1),
                              spec.radius, spec.lattice, eps_air, eps_slab)


def _hole_coefficients(g, radius, lattice, eps_hole, eps_bg):
    eta = np.pi * radius**2 / lattice**2
    g = np.asarray(g, float)
    out = np.empty(g.shape, dtype=complex)
    zero = g == 0
    out[zero] = eta * eps_hole + (1 - eta) * eps_bg
    gz = g[~zero]
    out[~zero] = (eps_hole - eps_bg) * 2 * np.pi * radius * scipy.special.j1(gz * radius) / (
        lattice**2 * gz
    )
    return out


@functools.lru_cache(maxsize=32)
def _orders(N: int):
    idx = np.arange(-N, N + 1)
    m, n = np.meshgrid(idx, idx, indexing="ij")
    m, n = m.ravel(), n.ravel()
    return m, n, m[:, None] - m[None, :], n[:, None] - n[None, :]


@functools.lru_cache(maxsize=16)
def _normal_field_matrices(N: int, radius_over_lattice: float, grid: int):
    """Toeplitz matrices of nx^2, nx*ny, ny^2 for the radial normal field."""
    x = (np.arange(grid) / grid + 0.5) % 1.0 - 0.5  # cell centred on the hole
    X, Y = np.meshgrid(x, x, indexing="ij")
    rho2 = X**2 + Y**2
    with np.errstate(invalid="ignore", divide="ignore"):
        nxx = np.where(rho2 > 0, X * X / rho2, 0.5)
        nxy = np.where(rho2 > 0, X * Y / rho2, 0.0)
    nyy = 1.0 - nxx
    _, _, dm, dn = _orders(N)
    mats = []
    for f in (nxx, nxy, nyy):
        c = np.fft.fft2(f) / grid**2
        mats.append(c[dm % grid, dn % grid])
    return tuple(mats)


def _eps_matrices(spec: CrystalSpec, wavelength: float, N: int):
    _, _, dm, dn = _orders(N)
    g = 2 * np.pi / spec.lattice * np.hypot(dm, dn)
    eps_slab = spec.index(wavelength) ** 2
    eps_air = spec.n_ambient**2
    E = _hole_coefficients(g, spec.radius, spec.lattice, eps_air, eps_slab)
    Einv_rule = _hole_coefficients(g, spec.radius, spec.lattice, 1 / eps_air, 1 / eps_slab)
    return E, Einv_rule


def solve(
    spec: CrystalSpec,
    exc: PlaneWaveExcitation,
    N: int = 5,
    *,
    factorization: Literal["li", "laurent"] = "li",
    incidence: Literal["left", "right"] = "left",
    convention: Literal["H", "E"] = "H",
    fft_grid: int = 512,
) -> RcwaResult:
    """Zeroth-order co-polarised ``(r, t)`` and total diffracted powers.

    ``r`` is referenced to the illuminated face and ``t`` to the opposite
    face.  With ``convention="E"`` both are ratios of the tangential electric
    field.  The default ``"H"`` reports tangential magnetic-field ratios
    (``r_H = -r_E``, ``t`` unchanged), the convention of the guided-mode
    Fresnel coefficients, in which the fundamental TE resonance is odd
    (``r + t`` stays off resonance).
    """
    if N < 0:
        raise ValueError("truncation must be non-negative")
    if N < MIN_TRUNCATION and spec.radius > 0:
        warnings.warn(f"truncation N={N} below {MIN_TRUNCATION}: results not converged",
                      NonConvergedWarning, stacklevel=2)
    lam = exc.wavelength
    k0 = 2 * np.pi / lam
    eps_a = spec.n_ambient**2
    m, n, _, _ = _orders(N)
    M = m.size
    G = lam / spec.lattice
    kx = exc.k_x / k0 + m * G
    ky = n * G
    kt2 = kx**2 + ky**2
    kz = np.sqrt(eps_a - kt2 + 0j)
    kz = np.where(kz.imag < 0, -kz, kz)
    if np.any(np.abs(kz) < 1e-12):
        raise SingularBoundary("diffraction order at grazing incidence (Rayleigh anomaly)")
    zero = (m == 0) & (n == 0)
    if np.any((kt2 < eps_a) & ~zero):
        warnings.warn("higher diffraction orders propagate", DiffractionWarning, stacklevel=2)

    # layer eigenproblem
    if spec.radius > 0:
        E, Einv_rule = _eps_matrices(spec, lam, N)
    else:
        E = np.diag(np.full(M, spec.index(lam) ** 2))
        Einv_rule = np.diag(np.full(M, spec.index(lam) ** -2))
    Einv = np.linalg.inv(E)
    I = np.eye(M)
    P = np.block([
        [kx[:, None] * Einv * ky[None, :], I - kx[:, None] * Einv * kx[None, :]],
        [ky[:, None] * Einv * ky[None, :] - I, -ky[:, None] * Einv * kx[None, :]],
    ])
    if factorization == "li" and spec.radius > 0:
        delta = E - np.linalg.inv(Einv_rule)
        nxx, nxy, nyy = _normal_field_matrices(N, spec.radius / spec.lattice, fft_grid)
        # symmetrised products keep the matrices Hermitian for lossless media
        sym = lambda n_: 0.5 * (delta @ n_ + n_ @ delta)
        exx = E - sym(nxx)
        exy = -sym(nxy)
        eyy = E - sym(nyy)
        eyx = exy
    elif factorization in ("li", "laurent"):
        exx = eyy = E
        exy = eyx = np.zeros_like(E)
    else:
        raise ValueError(f"unknown factorization {factorization!r}")
    KxKy = np.diag(kx * ky)
    Q = np.block([
        [KxKy + eyx, eyy - np.diag(kx**2)],
        [np.diag(ky**2) - exx, -KxKy - exy],
    ])
    lam_eig, W = np.linalg.eig(P @ Q)
    q = np.sqrt(-lam_eig + 0j)
    q = np.where((q.imag < 0) | ((q.imag == 0) & (q.real < 0)), -q, q)
    if np.any(np.abs(q) < 1e-14):
        raise SingularBoundary("layer mode with vanishing propagation constant")
    V = (Q @ W) / (1j * q)[None, :]
    X = np.exp(1j * q * spec.thickness * k0)

    # V0^-1 of the ambient, block-diagonal per order
    pref = 1j / (eps_a * kz)
    a11, a12 = -kx * ky * pref, (kx**2 - eps_a) * pref
    a21, a22 = (eps_a - ky**2) * pref, kx * ky * pref
    V0inv_V = np.vstack([a11[:, None] * V[:M] + a12[:, None] * V[M:],
                         a21[:, None] * V[:M] + a22[:, None] * V[M:]])
    A = W + V0inv_V
    B = (V0inv_V - W) * X[None, :]
    system = np.block([[A, -B], [B, -A]])

    # incident field on the (0, 0) order
    i0 = int(np.flatnonzero(zero)[0])
    s = np.zeros(2 * M, dtype=complex)
    comp = 1 if exc.polarization == "s" else 0
    if exc.polarization == "s":
        s[M + i0] = 1.0
    else:
        s[i0] = kz[i0] / np.sqrt(kz[i0] ** 2 + kx[i0] ** 2)
    rhs = np.zeros(4 * M, dtype=complex)
    if incidence == "left":
        rhs[: 2 * M] = 2 * s
    else:
        rhs[2 * M:] = -2 * s

    try:
        lu, piv = scipy.linalg.lu_factor(system, check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as err:
        raise SingularBoundary(str(err)) from err
    anorm = np.linalg.norm(system, 1)
    rcond = float(scipy.linalg.lapack.zgecon(lu, anorm, norm="1")[0])
    if not np.isfinite(rcond) or rcond < 1e-15:
        raise SingularBoundary(f"boundary system singular (rcond={rcond:.2e})")
    sol = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    a, b = sol[: 2 * M], sol[2 * M:]
    left_out = W @ (a + X * b)
    right_out = W @ (X * a + b)
    if incidence == "left":
        left_out = left_out - s
        refl, trans = left_out, right_out
    else:
        right_out = right_out - s
        refl, trans = right_out, left_out

    i_comp = comp * M + i0
    r00 = refl[i_comp] / s[i_comp]
    t00 = trans[i_comp] / s[i_comp]
    if convention == "H":
        r00 = -r00
    elif convention != "E":
        raise ValueError(f"unknown field convention {convention!r}")

    inc_power = _order_power(s[:M], s[M:], kx, ky, kz, eps_a)[i0]
    pr = _order_power(refl[:M], refl[M:], kx, ky, kz, eps_a) / inc_power
    pt = _order_power(trans[:M], trans[M:], kx, ky, kz, eps_a) / inc_power
    powers = {}
    for k in range(M):
        powers[(int(m[k]), int(n[k]), "r")] = float(pr[k])
        powers[(int(m[k]), int(n[k]), "t")] = float(pt[k])
    return RcwaResult(TwoPortScattering(complex(r00), complex(t00)),
                      float(pr.sum()), float(pt.sum()), powers, rcond)


def _order_power(ex, ey, kx, ky, kz, eps_a):
    ez = (kx * ex + ky * ey) / kz
    # propagating orders only; evanescent kz is purely imaginary
    return np.where(np.abs(kz.imag) < 1e-14,
                    kz.real * (np.abs(ex) ** 2 + np.abs(ey) ** 2 + np.abs(ez) ** 2), 0.0)


def _solve_point(args):
    spec, exc, N, kwargs = args
    return solve(spec, exc, N, **kwargs)


def spectrum(spec: CrystalSpec, wavelengths, k_x: float = 0.0, pol: str = "s", N: int = 5,
             *, threads: int = 1, **kwargs) -> list[RcwaResult]:
    """Solve along a wavelength grid at fixed ``k_x``; output order follows the grid."""
    jobs = [(spec, PlaneWaveExcitation(float(lam), k_x, pol), N, kwargs) for lam in wavelengths]
    if threads <= 1:
        return [_solve_point(j) for j in jobs]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(_solve_point, jobs))


def band_map(spec: CrystalSpec, k_x_grid, nu_over_c_grid, pol: str = "s", N: int = 5,
             *, threads: int = 1, **kwargs):
    """Reflection/transmission map on a ``(k_x, nu/c)`` grid (both in 1/m units).

    Returns a dict with ``R``, ``T``, ``r``, ``t`` arrays of shape
    ``(len(k_x_grid), len(nu_over_c_grid))``.
    """
    k_x_grid = np.asarray(k_x_grid, float)
    nu = np.asarray(nu_over_c_grid, float)
    for arr in (k_x_grid, nu):
        if arr.size > 1 and not (np.all(np.diff(arr) > 0) or np.all(np.diff(arr) < 0)):
            raise ValueError("grids must be strictly monotonic")
    jobs = [(spec, PlaneWaveExcitation(1.0 / v, float(kx), pol), N, kwargs)
            for kx in k_x_grid for v in nu]
    if threads <= 1:
        results = [_solve_point(j) for j in jobs]
    else:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(_solve_point, jobs))
    shape = (k_x_grid.size, nu.size)
    return {
        "k_x": k_x_grid,
        "nu_over_c": nu,
        "R": np.array([res.R_total for res in results]).reshape(shape),
        "T": np.array([res.T_total for res in results]).reshape(shape),
        "r": np.array([res.S00.r for res in results]).reshape(shape),
        "t": np.array([res.S00.t for res in results]).reshape(shape),
    }


def convolve_spectrometer(wavelengths, values, fwhm: float = 4e-9, axis: int = -1):
    """Gaussian instrument response along the wavelength axis.

    The kernel is renormalised at every output sample, so constant input is
    returned unchanged and edge samples are not darkened.  Non-uniform
    sampling is handled with trapezoid weights.
    """
    lam = np.asarray(wavelengths, float)
    vals = np.asarray(values, float)
    if lam.size < 2:
        return vals.copy()
    order = np.argsort(lam)
    lam_sorted = lam[order]
    if np.max(np.diff(lam_sorted)) > fwhm / 4:
        raise GridTooCoarse(f"sampling {np.max(np.diff(lam_sorted)):.3g} m exceeds fwhm/4")
    sigma = fwhm / (2 * np.sqrt(2 * np.log(2)))
    w = np.empty_like(lam_sorted)
    w[1:-1] = 0.5 * (lam_sorted[2:] - lam_sorted[:-2])
    w[0] = 0.5 * (lam_sorted[1] - lam_sorted[0])
    w[-1] = 0.5 * (lam_sorted[-1] - lam_sorted[-2])
    kern = np.exp(-0.5 * ((lam_sorted[:, None] - lam_sorted[None, :]) / sigma) ** 2) * w[None, :]
    kern /= kern.sum(axis=1, keepdims=True)
    moved = np.moveaxis(vals, axis, -1)[..., order]
    out_sorted = moved @ kern.T
    out = np.empty_like(out_sorted)
    out[..., order] = out_sorted
    return np.moveaxis(out, -1, axis)
