"""Photonic-crystal-slab mirrors and the Fabry-Perot cavities built from them."""

from .scattering import (
    FieldPair,
    IllConditioned,
    MirrorSpec,
    TransferMatrix,
    TwoPortScattering,
    channel_losses,
    eigenchannels,
    passivity_check,
)
from .rcwa import CrystalSpec, PlaneWaveExcitation, RcwaResult
from .fano import FanoParams, fano_rt, fit_fano, lossy_fano_rt
from .cavity import MimCavity, ModePair, SingleEndedCavity
from .scan import ScanTrace

__version__ = "0.1.0"
