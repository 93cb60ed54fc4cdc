"""Refractive-index models for the slab material."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ConstantIndex", "SellmeierIndex", "TabulatedIndex", "SI3N4_SELLMEIER", "index_model"]


@dataclass(frozen=True)
class ConstantIndex:
    n: float = 2.0
    extinction: float = 0.0

    def __call__(self, wavelength):
        return np.asarray(self.n + 1j * self.extinction + 0.0 * np.asarray(wavelength))[()]


@dataclass(frozen=True)
class SellmeierIndex:
    """``n^2 = 1 + sum B_i lam^2 / (lam^2 - C_i^2)`` with ``lam`` and ``C_i`` in um."""

    B: tuple[float, ...] = (3.0249, 40314.0)
    C_um: tuple[float, ...] = (0.1353406, 1239.842)
    extinction: float = 0.0

    def __call__(self, wavelength):
        lam2 = (np.asarray(wavelength, dtype=float) * 1e6) ** 2
        n2 = 1.0 + sum(b * lam2 / (lam2 - c * c) for b, c in zip(self.B, self.C_um))
        return (np.sqrt(n2) + 1j * self.extinction)[()]


# Two-term fit for stoichiometric LPCVD Si3N4 (0.31-5.5 um); editable, not ground truth.
SI3N4_SELLMEIER = SellmeierIndex()


@dataclass(frozen=True)
class TabulatedIndex:
    """Linear interpolation in a ``wavelength_nm, n[, k]`` table."""

    wavelength_nm: tuple[float, ...]
    n: tuple[float, ...]
    k: tuple[float, ...] = field(default=())
    extinction: float = 0.0

    @classmethod
    def from_file(cls, path, extinction: float = 0.0) -> "TabulatedIndex":
        data = np.loadtxt(Path(path), delimiter=",", comments="#", ndmin=2)
        if data.shape[1] < 2:
            raise ValueError(f"{path}: need at least wavelength_nm,n columns")
        order = np.argsort(data[:, 0])
        data = data[order]
        k = tuple(data[:, 2]) if data.shape[1] > 2 else ()
        return cls(tuple(data[:, 0]), tuple(data[:, 1]), k, extinction)

    def __call__(self, wavelength):
        lam_nm = np.asarray(wavelength, dtype=float) * 1e9
        if np.any(lam_nm < self.wavelength_nm[0]) or np.any(lam_nm > self.wavelength_nm[-1]):
            raise ValueError("wavelength outside tabulated range")
        n = np.interp(lam_nm, self.wavelength_nm, self.n)
        k = np.interp(lam_nm, self.wavelength_nm, self.k) if self.k else 0.0
        return (n + 1j * (k + self.extinction))[()]


def index_model(kind: str, *, n: float = 2.0, im_n: float = 0.0, path=None):
    """Build an index model from a config keyword: constant, sellmeier or table."""
    if kind == "constant":
        return ConstantIndex(n, im_n)
    if kind == "sellmeier":
        return SellmeierIndex(extinction=im_n)
    if kind == "table":
        if path is None:
            raise ValueError("table index model needs a file path")
        return TabulatedIndex.from_file(path, im_n)
    raise ValueError(f"unknown index model {kind!r}")
