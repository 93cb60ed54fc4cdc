"""Two-port scattering algebra for mirror-symmetric optical elements.

An element is described by its reflection ``r`` and transmission ``t``
amplitudes, identical for both sides.  Amplitudes may be Python complex
scalars or numpy arrays, in which case every operation broadcasts.

Conventions
-----------
Time dependence ``exp(-i w t)``.  A right-going wave picks up ``exp(+i k l)``
over a length ``l``, so a cavity round trip of length ``l`` contributes
``exp(+2 i k l)``.

A :class:`TransferMatrix` maps the field pair on the right of an element,
``(A_r, B_r)`` (right-going, left-going), onto the pair on its left:
``(A_l, B_l) = M @ (A_r, B_r)``.  A chain of elements ordered left to
right therefore composes as ``M1 @ M2 @ ...``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "IllConditioned",
    "TwoPortScattering",
    "FieldPair",
    "MirrorSpec",
    "TransferMatrix",
    "eigenchannels",
    "channel_losses",
    "passivity_check",
    "apply",
    "to_transfer",
    "from_transfer",
    "compose",
    "propagation",
    "mirror_scattering",
]

SQRT_HALF = np.sqrt(0.5)


class IllConditioned(ValueError):
    """Transfer-matrix conversion of an (almost) opaque element."""


@dataclass(frozen=True)
class TwoPortScattering:
    r: complex | np.ndarray
    t: complex | np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.t))):
            raise ValueError("scattering amplitudes must be finite")

    @property
    def R(self):
        return np.abs(self.r) ** 2

    @property
    def T(self):
        return np.abs(self.t) ** 2

    def __getitem__(self, idx) -> "TwoPortScattering":
        return TwoPortScattering(np.asarray(self.r)[idx], np.asarray(self.t)[idx])


@dataclass(frozen=True)
class FieldPair:
    a_l: complex | np.ndarray
    a_r: complex | np.ndarray


@dataclass(frozen=True)
class MirrorSpec:
    """Lossy partially transmitting mirror: power transmission and excess loss."""

    power_transmission: float
    excess_loss: float = 0.0

    def __post_init__(self):
        T, L = self.power_transmission, self.excess_loss
        if not (0.0 <= T <= 1.0 and 0.0 <= L <= 1.0 and T + L <= 1.0 + 1e-15):
            raise ValueError(f"invalid mirror: T'={T}, loss={L}")

    @property
    def reflectivity(self) -> float:
        return max(0.0, 1.0 - self.power_transmission - self.excess_loss)

    @property
    def loss(self) -> float:
        """Round-trip deficit ``L' = 1 - |r'|^2``."""
        return self.power_transmission + self.excess_loss


@dataclass(frozen=True)
class TransferMatrix:
    m: np.ndarray  # shape (..., 2, 2)

    @property
    def m11(self):
        return self.m[..., 0, 0]

    @property
    def m12(self):
        return self.m[..., 0, 1]

    @property
    def m21(self):
        return self.m[..., 1, 0]

    @property
    def m22(self):
        return self.m[..., 1, 1]

    def __matmul__(self, other: "TransferMatrix") -> "TransferMatrix":
        return compose(self, other)

    def det(self):
        return np.linalg.det(self.m)


def eigenchannels(S: TwoPortScattering):
    """Eigenvalues of S for symmetric and antisymmetric illumination."""
    return S.r + S.t, S.r - S.t


def channel_losses(S: TwoPortScattering):
    """``L_pm = 1 - |r +- t|^2``; negative values flag an active element."""
    s_plus, s_minus = eigenchannels(S)
    return 1.0 - np.abs(s_plus) ** 2, 1.0 - np.abs(s_minus) ** 2


def passivity_check(S: TwoPortScattering, tol: float = 1e-9) -> bool:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    s_plus, s_minus = eigenchannels(S)
    return bool(np.all(np.abs(s_plus) <= 1 + tol) and np.all(np.abs(s_minus) <= 1 + tol))


def apply(S: TwoPortScattering, incoming: FieldPair) -> FieldPair:
    """Outgoing fields ``(a_out_l, a_out_r)`` for incoming ``(a_in_l, a_in_r)``."""
    return FieldPair(
        S.r * incoming.a_l + S.t * incoming.a_r,
        S.t * incoming.a_l + S.r * incoming.a_r,
    )


def to_transfer(S: TwoPortScattering, tol_t: float = 1e-9) -> TransferMatrix:
    r = np.asarray(S.r, dtype=complex)
    t = np.asarray(S.t, dtype=complex)
    if np.any(np.abs(t) <= tol_t):
        raise IllConditioned(
            f"|t| <= {tol_t:g}: element is opaque, use the eigenmode formulas instead"
        )
    m = np.empty(np.broadcast(r, t).shape + (2, 2), dtype=complex)
    m[..., 0, 0] = 1.0 / t
    m[..., 0, 1] = -r / t
    m[..., 1, 0] = r / t
    m[..., 1, 1] = (t * t - r * r) / t
    return TransferMatrix(m)


def from_transfer(M: TransferMatrix) -> TwoPortScattering:
    """Left-incidence ``(r, t)`` of the element described by ``M``."""
    return TwoPortScattering(M.m21 / M.m11, 1.0 / M.m11)


def compose(*mats: TransferMatrix) -> TransferMatrix:
    out = mats[0].m
    for M in mats[1:]:
        out = np.matmul(out, M.m)
    return TransferMatrix(out)


def propagation(k, length) -> TransferMatrix:
    """Free propagation over ``length`` (m) at wavenumber ``k`` (rad/m)."""
    if np.any(np.asarray(length) < 0):
        raise ValueError("propagation length must be non-negative")
    phase = np.exp(1j * np.asarray(k) * np.asarray(length))
    m = np.zeros(np.shape(phase) + (2, 2), dtype=complex)
    m[..., 0, 0] = 1.0 / phase
    m[..., 1, 1] = phase
    return TransferMatrix(m)


def mirror_scattering(m: MirrorSpec) -> TwoPortScattering:
    """Mirror with real positive ``r`` and ``t = i sqrt(T')``."""
    return TwoPortScattering(
        complex(np.sqrt(m.reflectivity)), 1j * np.sqrt(m.power_transmission)
    )
