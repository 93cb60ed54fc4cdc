"""Fabry-Perot cavities closed by a photonic-crystal membrane.

Two geometries are modelled with exact transfer-matrix chains:

* single-ended: input mirror, free space ``l0``, membrane as end mirror;
* membrane-in-the-middle (MIM): mirror, ``l + dl/2``, membrane,
  ``l - dl/2``, mirror.

The analytic coupled-cavity eigenmodes are kept separate from the chains
so that each can be used to check the other.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.constants import c

from .scattering import (
    MirrorSpec,
    TwoPortScattering,
    compose,
    mirror_scattering,
    propagation,
    to_transfer,
)

__all__ = [
    "DegenerateChannel",
    "SingleEndedCavity",
    "MimCavity",
    "ModePair",
    "fsr_wavelength",
    "fsr_frequency",
    "finesse_from_rtl",
    "round_trip_loss",
    "half_bandwidth",
    "resonant_transmission",
    "transmission_upper_bound",
    "airy_transmission",
    "mim_transmission",
    "mim_eigenmodes",
    "nearest_mode_index",
    "mode_splitting",
    "splitting_curve",
    "mim_transmission_map",
]

Scatterer = Union[TwoPortScattering, Callable[[np.ndarray], TwoPortScattering]]


class DegenerateChannel(ValueError):
    """An eigenchannel amplitude ``r +- t`` vanishes."""


def _scatter(element: Scatterer, lam) -> TwoPortScattering:
    if callable(element):
        return element(lam)
    return element


@dataclass(frozen=True)
class SingleEndedCavity:
    length: float
    input_mirror: MirrorSpec
    end: Scatterer

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("cavity length must be positive")


@dataclass(frozen=True)
class MimCavity:
    sub_length: float
    mirror: MirrorSpec
    membrane: Scatterer

    def __post_init__(self):
        if self.sub_length <= 0:
            raise ValueError("sub-cavity length must be positive")


@dataclass(frozen=True)
class ModePair:
    omega_plus: float
    omega_minus: float
    gamma_plus: float
    gamma_minus: float
    delta_nu: float
    p: int

    def to_json(self) -> dict:
        return {
            "omega_plus_rad_s": self.omega_plus,
            "omega_minus_rad_s": self.omega_minus,
            "gamma_plus_rad_s": self.gamma_plus,
            "gamma_minus_rad_s": self.gamma_minus,
            "delta_nu_hz": self.delta_nu,
            "p": self.p,
        }


def fsr_wavelength(lam, l0):
    if np.any(np.asarray(l0) <= 0):
        raise ValueError("length must be positive")
    return np.asarray(lam) ** 2 / (2 * np.asarray(l0))


def fsr_frequency(l0):
    return c / (2 * l0)


def finesse_from_rtl(gamma_rtl):
    if np.any(np.asarray(gamma_rtl) <= 0):
        raise ValueError("round-trip loss must be positive")
    return 2 * np.pi / np.asarray(gamma_rtl)


def round_trip_loss(finesse):
    return 2 * np.pi / np.asarray(finesse)


def half_bandwidth(l, finesse):
    """``kappa / 2 = c / (4 l F)`` in Hz."""
    if l <= 0 or np.any(np.asarray(finesse) <= 0):
        raise ValueError("length and finesse must be positive")
    return c / (4 * l * np.asarray(finesse))


def resonant_transmission(T_c, T_mem, gamma_rtl):
    """Peak transmission of the single-ended cavity, small-loss limit."""
    return 4 * np.asarray(T_c) * np.asarray(T_mem) / np.asarray(gamma_rtl) ** 2


def transmission_upper_bound(R):
    """Largest membrane ``T`` compatible with passivity when ``r`` and ``t`` are in phase."""
    R = np.asarray(R, float)
    if np.any((R < 0) | (R > 1)):
        raise ValueError("R must lie in [0, 1]")
    return (1 - np.sqrt(R)) ** 2


def airy_transmission(cav: SingleEndedCavity, lam):
    """Power transmission of the single-ended cavity (vectorised in ``lam``)."""
    lam = np.asarray(lam, float)
    k = 2 * np.pi / lam
    M_in = to_transfer(mirror_scattering(cav.input_mirror))
    M = compose(M_in, propagation(k, cav.length), to_transfer(_scatter(cav.end, lam)))
    return np.abs(1.0 / M.m11) ** 2


def mim_transmission(cav: MimCavity, lam, delta_l=0.0):
    lam = np.asarray(lam, float)
    k = 2 * np.pi / lam
    mirror = to_transfer(mirror_scattering(cav.mirror))
    M = compose(
        mirror,
        propagation(k, cav.sub_length + delta_l / 2),
        to_transfer(_scatter(cav.membrane, lam)),
        propagation(k, cav.sub_length - delta_l / 2),
        mirror,
    )
    return np.abs(1.0 / M.m11) ** 2


def _mirror_r(mirror: MirrorSpec | complex) -> complex:
    if isinstance(mirror, MirrorSpec):
        return mirror_scattering(mirror).r
    return complex(mirror)


def mim_eigenmodes(S: TwoPortScattering, mirror, l: float, p: int) -> ModePair:
    """Complex eigenfrequencies of the symmetric MIM cavity.

    ``omega_+- = -(c/2l)(arg[(r +- t) r'] + 2 p pi)`` and FWHM
    ``gamma_+- = -(c/l) log(|r +- t| |r'|)``.
    """
    rp = _mirror_r(mirror)
    rho_plus = (S.r + S.t) * rp
    rho_minus = (S.r - S.t) * rp
    if abs(rho_plus) == 0 or abs(rho_minus) == 0:
        raise DegenerateChannel("r +- t or r' vanishes")
    w_plus = -(c / (2 * l)) * (np.angle(rho_plus) + 2 * p * np.pi)
    w_minus = -(c / (2 * l)) * (np.angle(rho_minus) + 2 * p * np.pi)
    g_plus = -(c / l) * np.log(abs(rho_plus))
    g_minus = -(c / l) * np.log(abs(rho_minus))
    return ModePair(float(w_plus), float(w_minus), float(g_plus), float(g_minus),
                    float(mode_splitting(S, l)), int(p))


def nearest_mode_index(S: TwoPortScattering, mirror, l: float, lam: float) -> int:
    """Longitudinal index ``p`` whose symmetric mode lies closest to ``lam``."""
    rho = (S.r + S.t) * _mirror_r(mirror)
    omega = 2 * np.pi * c / lam
    return int(np.round(-(omega * 2 * l / c + np.angle(rho)) / (2 * np.pi)))


def mode_splitting(S: TwoPortScattering, l: float):
    """``Delta nu = (c / 4 pi l) arg((r - t)/(r + t))`` in Hz, principal branch."""
    num, den = S.r - S.t, S.r + S.t
    if np.any(np.abs(num) == 0) or np.any(np.abs(den) == 0):
        raise DegenerateChannel("r +- t vanishes")
    return c / (4 * np.pi * l) * np.angle(num / den)


def splitting_curve(S: TwoPortScattering, l: float):
    """Mode splitting along a wavelength sweep, phase-unwrapped along the sweep."""
    num, den = np.asarray(S.r - S.t), np.asarray(S.r + S.t)
    if np.any(np.abs(num) == 0) or np.any(np.abs(den) == 0):
        raise DegenerateChannel("r +- t vanishes")
    phase = np.unwrap(np.angle(num / den))
    # keep the branch nearest zero at the sweep midpoint
    mid = phase[phase.size // 2]
    phase = phase - 2 * np.pi * np.round(mid / (2 * np.pi))
    return c / (4 * np.pi * l) * phase


def mim_transmission_map(cav: MimCavity, delta_l_grid, detuning_grid, lambda_c: float,
                         *, threads: int = 1) -> dict:
    """Transmission versus membrane displacement and laser detuning.

    ``detuning_grid`` is in Hz relative to ``c / lambda_c`` (positive =
    bluer).  Returns a dict with the grids and ``transmission`` of shape
    ``(len(delta_l_grid), len(detuning_grid))``.
    """
    dl = np.asarray(delta_l_grid, float)
    det = np.asarray(detuning_grid, float)
    for arr in (dl, det):
        if arr.size > 1 and not np.all(np.diff(arr) > 0):
            raise ValueError("grids must be strictly increasing")
    lam = c / (c / lambda_c + det)
    S = _scatter(cav.membrane, lam)
    fixed = TwoPortScattering(np.broadcast_to(S.r, lam.shape), np.broadcast_to(S.t, lam.shape))
    frozen = MimCavity(cav.sub_length, cav.mirror, fixed)
    rows = (lambda x: mim_transmission(frozen, lam, x))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            T = np.array(list(pool.map(rows, dl)))
    else:
        T = np.array([rows(x) for x in dl])
    return {
        "delta_l": dl,
        "detuning": det,
        "lambda_c": lambda_c,
        "fsr_hz": fsr_frequency(cav.sub_length),
        "transmission": T,
    }
