"""Validated run configuration for the command-line front end.

Lengths are given in the units named by each field suffix (``_nm``,
``_mm``), losses in ppm, frequencies in Hz.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import rcwa
from .fano import FanoParams, calibrate_gamma_loss
from .materials import index_model


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Grid(_Strict):
    start: float
    stop: float
    num: int = Field(ge=1)

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.num)


class IndexConfig(_Strict):
    kind: Literal["constant", "sellmeier", "table"] = "sellmeier"
    n: float = Field(2.0, gt=1.0)
    im_n: float = Field(0.0, ge=0.0)
    path: Optional[str] = None


class CrystalConfig(_Strict):
    lattice_nm: float = Field(rcwa.DEFAULT_LATTICE * 1e9, gt=0)
    radius_nm: float = Field(276.0, gt=0)
    thickness_nm: float = Field(200.0, gt=0)
    index: IndexConfig = IndexConfig()
    n_ambient: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _holes_fit(self):
        if 2 * self.radius_nm >= self.lattice_nm:
            raise ValueError("hole diameter must be smaller than the lattice period")
        return self

    def build(self) -> rcwa.CrystalSpec:
        idx = index_model(self.index.kind, n=self.index.n, im_n=self.index.im_n,
                          path=self.index.path)
        return rcwa.CrystalSpec(self.lattice_nm * 1e-9, self.radius_nm * 1e-9,
                                self.thickness_nm * 1e-9, idx, self.n_ambient)


class MembraneConfig(_Strict):
    """Fano membrane placed by its transmission zero ``lambda1``."""

    phi: float = 0.0
    psi: float = 0.0
    lambda1_nm: float = 1076.0
    gamma_nm: float = Field(12.0, gt=0)
    gamma_prime_nm: Optional[float] = Field(None, ge=0)
    one_minus_R_ppm: Optional[float] = Field(None, gt=0, lt=1e6)
    branch: Literal[-1, 1] = -1

    @model_validator(mode="after")
    def _one_loss(self):
        if self.gamma_prime_nm is not None and self.one_minus_R_ppm is not None:
            raise ValueError("give gamma_prime_nm or one_minus_R_ppm, not both")
        return self

    def build(self) -> FanoParams:
        g = self.gamma_nm * 1e-9
        lam0 = self.lambda1_nm * 1e-9 + self.branch * g * np.tan(self.phi)
        p = FanoParams(self.phi, self.psi, lam0, g, 0.0, self.branch)
        if self.one_minus_R_ppm is not None:
            return calibrate_gamma_loss(p, self.one_minus_R_ppm * 1e-6)
        if self.gamma_prime_nm is not None:
            return FanoParams(self.phi, self.psi, lam0, g, self.gamma_prime_nm * 1e-9, self.branch)
        return p


class GuidedBandsConfig(_Strict):
    crystal: CrystalConfig = CrystalConfig()
    epsilon_eff: Optional[float] = Field(None, gt=1)
    wavelength_nm: float = Field(1076.0, gt=0)
    k_x_rad_per_um: Grid = Grid(start=0.0, stop=0.5, num=11)


class BandMapConfig(_Strict):
    crystal: CrystalConfig = CrystalConfig()
    polarizations: list[Literal["s", "p"]] = ["s", "p"]
    truncation: int = Field(5, ge=1)
    factorization: Literal["li", "laurent"] = "li"
    k_x_rad_per_um: Grid = Grid(start=0.0, stop=0.5, num=6)
    wavelength_nm: Grid = Grid(start=950.0, stop=1200.0, num=126)
    spectrometer_fwhm_nm: Optional[float] = Field(4.0, gt=0)


class FanoFitConfig(_Strict):
    spectrum_file: Optional[str] = None
    crystal: CrystalConfig = CrystalConfig()
    polarization: Literal["s", "p"] = "s"
    truncation: int = Field(5, ge=1)
    wavelength_nm: Grid = Grid(start=1125.0, stop=1165.0, num=161)
    window_nm: Optional[tuple[float, float]] = None
    branch: Optional[Literal[-1, 1]] = -1


class ScanConfig(_Strict):
    centers_nm: list[float] = [1076.0]
    fsr_count: float = Field(3.0, gt=1)
    samples: int = Field(200000, ge=100)
    sideband_offset_hz: float = Field(50e6, ge=0)
    sideband_power_ratio: float = Field(0.1, ge=0)
    noise_rms: float = Field(0.0, ge=0)
    scan_speed_jitter: float = Field(0.0, ge=0, lt=1)
    trials: int = Field(1, ge=1)


class CavityScanConfig(_Strict):
    length_mm: float = Field(17.4, gt=0)
    input_T_ppm: float = Field(455.0, gt=0, lt=1e6)
    input_loss_ppm: float = Field(0.0, ge=0)
    membrane: MembraneConfig = MembraneConfig(one_minus_R_ppm=530.0)
    scan: ScanConfig = ScanConfig()


class MimMapConfig(_Strict):
    sub_length_mm: float = Field(16.0, gt=0)
    mirror_T_ppm: float = Field(455.0, gt=0, lt=1e6)
    membrane: MembraneConfig = MembraneConfig(lambda1_nm=1079.1, gamma_prime_nm=0.01)
    lambda_c_offsets_nm: list[float] = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]
    delta_l_nm: Grid = Grid(start=-0.03, stop=0.03, num=7)
    detuning_points: int = Field(4001, ge=11)
    detuning_span_widths: float = Field(20.0, gt=0)
    neighbours: int = Field(3, ge=0)


class RunConfig(_Strict):
    guided_bands: GuidedBandsConfig = GuidedBandsConfig()
    band_map: BandMapConfig = BandMapConfig()
    fano_fit: FanoFitConfig = FanoFitConfig()
    cavity_scan: CavityScanConfig = CavityScanConfig()
    mim_map: MimMapConfig = MimMapConfig()


def load_config(path: str | Path | None) -> RunConfig:
    """Read a JSON or YAML file (by suffix); ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    return RunConfig.model_validate(data)
