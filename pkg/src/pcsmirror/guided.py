"""Guided modes of the homogenised (unpatterned) membrane.

A mode is a plane wave bouncing inside the slab by total internal
reflection.  Its in-plane wavevector is borrowed from a first-order
diffraction vector of the lattice; the longitudinal wavevector ``k_zm``
solves the round-trip condition ``r_j^2 exp(-2 i k_zm d) = 1``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.optimize import brentq
from scipy.constants import c

__all__ = [
    "SlabSpec",
    "DiffractionOrder",
    "GuidedModeSolution",
    "BandPoint",
    "NoRoot",
    "Inconsistent",
    "FIRST_ORDERS",
    "fresnel_te",
    "fresnel_tm",
    "dispersion_omega",
    "solve_guided_mode",
    "classify_symmetry",
    "band_overlay",
    "bands_to_csv",
]

Polarization = Literal["TE", "TM"]


class NoRoot(ValueError):
    """No guided solution in the scanned ``k_zm`` window."""


class Inconsistent(ValueError):
    pass


@dataclass(frozen=True)
class SlabSpec:
    thickness: float
    epsilon_eff: float

    def __post_init__(self):
        if self.thickness <= 0 or self.epsilon_eff <= 1:
            raise ValueError("need thickness > 0 and epsilon_eff > 1")


@dataclass(frozen=True, order=True)
class DiffractionOrder:
    p_x: int
    p_y: int


FIRST_ORDERS = (
    DiffractionOrder(1, 0),
    DiffractionOrder(-1, 0),
    DiffractionOrder(0, 1),
    DiffractionOrder(0, -1),
)


@dataclass(frozen=True)
class GuidedModeSolution:
    polarization: Polarization
    order: DiffractionOrder
    k_x: float
    omega: float
    k_zm: float
    k_zair: complex
    xoy_symmetry: int
    residual: float
    epsilon_eff: float
    thickness: float

    @property
    def wavelength(self) -> float:
        return 2 * np.pi * c / self.omega

    @property
    def reflection(self) -> complex:
        return _fresnel(self.polarization, self.k_zm, self.k_zair, self.epsilon_eff)


@dataclass(frozen=True)
class BandPoint:
    polarization: Polarization
    order: DiffractionOrder
    k_x: float
    solution: GuidedModeSolution | None
    error: str | None = None


def fresnel_te(k_zm, k_zair):
    return (k_zair - k_zm) / (k_zm + k_zair)


def fresnel_tm(k_zm, k_zair, epsilon_eff):
    return (k_zm - epsilon_eff * k_zair) / (k_zm + epsilon_eff * k_zair)


def _fresnel(pol, k_zm, k_zair, eps):
    if pol == "TE":
        return fresnel_te(k_zm, k_zair)
    if pol == "TM":
        return fresnel_tm(k_zm, k_zair, eps)
    raise ValueError(f"unknown polarization {pol!r}")


def _transverse_k2(k_x, order: DiffractionOrder, lattice):
    g = 2 * np.pi / lattice
    return (k_x + order.p_x * g) ** 2 + (order.p_y * g) ** 2


def dispersion_omega(k_x, order: DiffractionOrder, k_zm, lattice, epsilon_eff):
    """Angular frequency with ``eps_eff w^2/c^2 = k_t^2 + k_zm^2``."""
    if lattice <= 0:
        raise ValueError("lattice period must be positive")
    return c * np.sqrt((_transverse_k2(k_x, order, lattice) + k_zm**2) / epsilon_eff)


def _round_trip(pol, q, kt2, slab: SlabSpec):
    w2 = (kt2 + q**2) / slab.epsilon_eff
    k_zair = -1j * np.sqrt(np.maximum(kt2 - w2, 0.0))
    r = _fresnel(pol, q, k_zair, slab.epsilon_eff)
    return r * r * np.exp(-2j * q * slab.thickness), k_zair


def solve_guided_mode(
    pol: Polarization,
    order: DiffractionOrder,
    k_x: float,
    slab: SlabSpec,
    lattice: float,
    n_grid: int = 2000,
) -> GuidedModeSolution:
    """Fundamental (lowest-frequency) guided mode for one diffraction order."""
    kt2 = _transverse_k2(k_x, order, lattice)
    q_max = np.sqrt(kt2 * (slab.epsilon_eff - 1))
    if q_max <= 0:
        raise NoRoot("zero in-plane wavevector: no evanescent window")
    q = np.linspace(0, q_max, n_grid + 2)[1:-1]
    phase = np.angle(_round_trip(pol, q, kt2, slab)[0])
    s = np.sign(phase)
    # genuine zeros, not the +-pi wrap
    cand = np.flatnonzero((s[:-1] * s[1:] <= 0) & (np.abs(phase[1:] - phase[:-1]) < np.pi))
    if cand.size == 0:
        raise NoRoot(f"{pol}{(order.p_x, order.p_y)} at k_x={k_x:g}: no root")
    i = cand[0]
    f = lambda x: np.angle(_round_trip(pol, x, kt2, slab)[0])
    if phase[i] == 0:
        root = q[i]
    else:
        root = brentq(f, q[i], q[i + 1], xtol=1e-14 * q_max, rtol=4 * np.finfo(float).eps,
                      maxiter=200)
    value, k_zair = _round_trip(pol, root, kt2, slab)
    residual = float(abs(value - 1))
    if residual >= 1e-9:
        raise NoRoot(f"root refinement failed (residual {residual:.2e})")
    omega = float(dispersion_omega(k_x, order, root, lattice, slab.epsilon_eff))
    sol = GuidedModeSolution(pol, order, float(k_x), omega, float(root), complex(k_zair),
                             0, residual, slab.epsilon_eff, slab.thickness)
    return _with_symmetry(sol)


def _with_symmetry(sol: GuidedModeSolution) -> GuidedModeSolution:
    return GuidedModeSolution(**{**sol.__dict__, "xoy_symmetry": classify_symmetry(sol)})


def classify_symmetry(sol: GuidedModeSolution) -> int:
    """Sign of the half round-trip coefficient ``r_j exp(-i k_zm d)``."""
    half = sol.reflection * np.exp(-1j * sol.k_zm * sol.thickness)
    for sign in (1, -1):
        if abs(half - sign) < 1e-6:
            return sign
    raise Inconsistent(f"half round-trip coefficient {half:.6g} is not +-1")


def band_overlay(k_x_grid, slab: SlabSpec, lattice: float) -> list[BandPoint]:
    """TE/TM fundamental bands of the four first diffraction orders.

    Rows are ordered by polarisation, diffraction order, then ``k_x``.
    """
    rows = []
    for pol in ("TE", "TM"):
        for order in FIRST_ORDERS:
            for kx in k_x_grid:
                try:
                    sol = solve_guided_mode(pol, order, float(kx), slab, lattice)
                    rows.append(BandPoint(pol, order, float(kx), sol))
                except NoRoot as err:
                    rows.append(BandPoint(pol, order, float(kx), None, str(err)))
    return rows


def bands_to_csv(rows: list[BandPoint]) -> str:
    """CSV table; ``k_x`` in rad/um and ``omega/(2 pi c)`` in 1/um."""
    buf = io.StringIO()
    buf.write("# units: k_x rad/um; omega_over_2pi_c 1/um; symmetry +1/-1 about xOy\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pol", "p_x", "p_y", "k_x", "omega_over_2pi_c", "symmetry"])
    for row in rows:
        if row.solution is None:
            w.writerow([row.polarization, row.order.p_x, row.order.p_y,
                        f"{row.k_x * 1e-6:.12g}", "nan", "nan"])
            continue
        sol = row.solution
        w.writerow([sol.polarization, sol.order.p_x, sol.order.p_y, f"{sol.k_x * 1e-6:.12g}",
                    f"{sol.omega / (2 * np.pi * c) * 1e-6:.12g}", sol.xoy_symmetry])
    return buf.getvalue()
