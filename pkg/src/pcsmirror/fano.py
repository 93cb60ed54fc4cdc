"""Two-mode Fano model of a guided resonance, with a phenomenological loss width.

Near a guided resonance at ``lambda0`` of width ``gamma`` the slab
coefficients are::

    L(lam) = gamma / (i (lam - lambda0) + gamma + gamma_loss)
    r = r_d + s L (s r_d - t_d)
    t = t_d +   L (s r_d - t_d)

with ``s = +-1`` the xOy parity of the guided mode.  ``gamma_loss = 0`` is
the lossless model.  The off-resonant pair is parameterised as
``r_d = i sin(phi) e^{i psi}``, ``t_d = cos(phi) e^{i psi}`` so that
``|r_d + t_d| = |r_d - t_d| = 1`` holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, least_squares, minimize_scalar
from scipy.signal import find_peaks

from .scattering import TwoPortScattering, channel_losses

__all__ = [
    "FanoParams",
    "FanoFit",
    "NoZero",
    "FitDiverged",
    "AmbiguousWindow",
    "fano_rt",
    "lossy_fano_rt",
    "channel_losses_closed_form",
    "closed_form_discrepancy",
    "zero_transmission_wavelength",
    "ZeroTransmission",
    "fit_fano",
    "calibrate_gamma_loss",
]


class NoZero(ValueError):
    """Transmission never vanishes (lossy model or inconsistent input)."""


class FitDiverged(RuntimeError):
    def __init__(self, msg, residual_trace=()):
        super().__init__(msg)
        self.residual_trace = list(residual_trace)


class AmbiguousWindow(ValueError):
    """More than one resonance in the fit window."""


@dataclass(frozen=True)
class FanoParams:
    phi: float
    psi: float
    lambda0: float
    gamma: float
    gamma_loss: float = 0.0
    branch: int = -1

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.gamma_loss < 0:
            raise ValueError("gamma_loss must be non-negative")
        if self.branch not in (1, -1):
            raise ValueError("branch must be +1 or -1")

    @property
    def r_d(self) -> complex:
        return 1j * np.sin(self.phi) * np.exp(1j * self.psi)

    @property
    def t_d(self) -> complex:
        return np.cos(self.phi) * np.exp(1j * self.psi)

    @classmethod
    def from_direct(cls, r_d, t_d, lambda0, gamma, gamma_loss=0.0, branch=-1, tol=1e-9):
        """Build from explicit ``(r_d, t_d)``; they must form a lossless pair."""
        r_d, t_d = complex(r_d), complex(t_d)
        if abs(abs(r_d + t_d) - 1) > tol or abs(abs(r_d - t_d) - 1) > tol:
            raise ValueError("off-resonant coefficients must satisfy |r_d +- t_d| = 1")
        psi = np.angle(t_d) if abs(t_d) > abs(r_d) else np.angle(r_d / 1j)
        phi = np.arctan2((r_d / (1j * np.exp(1j * psi))).real, (t_d * np.exp(-1j * psi)).real)
        return cls(float(phi), float(psi), lambda0, gamma, gamma_loss, branch)

    def to_json(self) -> dict:
        return {
            "phi": self.phi,
            "psi": self.psi,
            "lambda0_nm": self.lambda0 * 1e9,
            "gamma_nm": self.gamma * 1e9,
            "gamma_prime_nm": self.gamma_loss * 1e9,
            "branch": self.branch,
        }

    @classmethod
    def from_json(cls, d: dict) -> "FanoParams":
        return cls(d["phi"], d["psi"], d["lambda0_nm"] * 1e-9, d["gamma_nm"] * 1e-9,
                   d.get("gamma_prime_nm", 0.0) * 1e-9, int(d.get("branch", -1)))


def _lorentz(p: FanoParams, lam, include_loss: bool):
    loss = p.gamma_loss if include_loss else 0.0
    return p.gamma / (1j * (np.asarray(lam) - p.lambda0) + p.gamma + loss)


def _model(p: FanoParams, lam, include_loss):
    L = _lorentz(p, lam, include_loss)
    s = p.branch
    drive = s * p.r_d - p.t_d
    return TwoPortScattering(p.r_d + s * L * drive, p.t_d + L * drive)


def fano_rt(p: FanoParams, lam) -> TwoPortScattering:
    """Lossless two-mode model; ``gamma_loss`` is ignored."""
    return _model(p, lam, include_loss=False)


def lossy_fano_rt(p: FanoParams, lam) -> TwoPortScattering:
    return _model(p, lam, include_loss=True)


def channel_losses_closed_form(p: FanoParams, lam):
    """``(L_plus, L_minus)`` Lorentzian expressions for the antisymmetric branch."""
    if p.branch != -1:
        raise ValueError("closed form holds for the antisymmetric (branch -1) mode")
    g, gl = p.gamma, p.gamma_loss
    d = np.asarray(lam) - p.lambda0
    L_minus = 4 * g * gl / ((g + gl) ** 2 + d**2)
    return np.zeros_like(L_minus), L_minus


def closed_form_discrepancy(p: FanoParams, lam):
    """Direct ``L_minus`` minus the Lorentzian closed form (zero when ``r_d = 0``)."""
    direct = channel_losses(lossy_fano_rt(p, lam))[1]
    return direct - channel_losses_closed_form(p, lam)[1]


@dataclass(frozen=True)
class ZeroTransmission:
    wavelength: float
    t_min: float
    closed_form_sign: int
    closed_form: dict
    discrepancy: float


def zero_transmission_wavelength(p: FanoParams, span: float = 50.0) -> ZeroTransmission:
    """Wavelength where ``|t|`` vanishes, located numerically.

    The search runs in units of ``gamma`` around ``lambda0`` so the root keeps
    full relative precision.  Both signs of ``lambda0 +- i gamma r_d / t_d``
    are evaluated and the one matching the numerical root is reported.
    """
    if abs(p.t_d) == 0:
        raise NoZero("t_d = 0")

    def abs_t(x):
        return abs(_model(p, p.lambda0 + x * p.gamma, include_loss=True).t)

    grid = np.linspace(-span, span, 4001)
    vals = np.array([abs_t(x) for x in grid])
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(abs_t, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-15, "maxiter": 500})
    x = _golden_refine(abs_t, res.x, (hi - lo) * 1e-3)
    lam1 = p.lambda0 + x * p.gamma
    tmin = abs(lossy_fano_rt(p, lam1).t)
    if tmin > 1e-6:
        raise NoZero(f"min |t| = {tmin:.3g}; model is lossy or inconsistent")
    ratio = 1j * p.r_d / p.t_d
    candidates = {+1: p.lambda0 + (p.gamma * ratio).real, -1: p.lambda0 - (p.gamma * ratio).real}
    sign = min(candidates, key=lambda s: abs(candidates[s] - lam1))
    return ZeroTransmission(lam1, tmin, sign, candidates, abs(candidates[sign] - lam1))


def _golden_refine(f, x0, half_width, tol=1e-15, maxiter=200):
    a, b = x0 - half_width, x0 + half_width
    g = (np.sqrt(5) - 1) / 2
    c1, c2 = b - g * (b - a), a + g * (b - a)
    f1, f2 = f(c1), f(c2)
    for _ in range(maxiter):
        if abs(b - a) <= tol * max(1.0, abs(x0)):
            break
        if f1 < f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - g * (b - a)
            f1 = f(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + g * (b - a)
            f2 = f(c2)
    cands = [(f(x), x) for x in (a, b, c1, c2, x0)]
    return min(cands)[1]


@dataclass
class FanoFit:
    params: FanoParams
    covariance: np.ndarray
    residual_rms: float
    lambda1: float | None
    n_samples: int
    cost_trace: list = field(default_factory=list)

    def to_json(self) -> dict:
        out = self.params.to_json()
        names = ("phi", "psi", "lambda0", "gamma")
        stderr = np.sqrt(np.clip(np.diag(self.covariance), 0, None))
        scale = {"lambda0": 1e9, "gamma": 1e9}
        out["stderr"] = {
            (f"{n}_nm" if n in scale else n): float(s * scale.get(n, 1.0))
            for n, s in zip(names, stderr)
        }
        out["lambda1_nm"] = None if self.lambda1 is None else self.lambda1 * 1e9
        out["residual_rms"] = self.residual_rms
        out["n_samples"] = self.n_samples
        return out


def _count_resonances(lam, T):
    span = np.ptp(T)
    if span == 0:
        return 0
    dips, _ = find_peaks(-T, prominence=0.25 * span)
    return dips.size


def fit_fano(
    wavelengths,
    r=None,
    t=None,
    *,
    T=None,
    window: tuple[float, float] | None = None,
    branch: int | None = -1,
    guess: FanoParams | None = None,
) -> FanoFit:
    """Least-squares fit of the lossless two-mode model.

    Either complex ``r`` and ``t`` (both fitted, real and imaginary parts) or a
    power transmission ``T`` must be given.  With power data only the global
    phase ``psi`` is unobservable and is held at 0.  ``branch=None`` fits both
    parities and keeps the lower residual.
    """
    if branch is None:
        fits = []
        for b in (-1, 1):
            try:
                fits.append(fit_fano(wavelengths, r, t, T=T, window=window, branch=b, guess=guess))
            except FitDiverged:
                continue
        if not fits:
            raise FitDiverged("neither branch converged")
        return min(fits, key=lambda f: f.residual_rms)
    lam = np.asarray(wavelengths, float)
    complex_data = t is not None
    if not complex_data and T is None:
        raise ValueError("need complex (r, t) or power transmission T")
    if window is not None:
        sel = (lam >= window[0]) & (lam <= window[1])
    else:
        sel = np.ones(lam.size, bool)
    lam = lam[sel]
    if lam.size < 20:
        raise ValueError("need at least 20 samples in the fit window")
    if complex_data:
        r = np.asarray(r, complex)[sel]
        t = np.asarray(t, complex)[sel]
        Tdata = np.abs(t) ** 2
    else:
        Tdata = np.asarray(T, float)[sel]
    if _count_resonances(lam, Tdata) > 1:
        raise AmbiguousWindow("more than one transmission dip in the window")

    # work in nm, centred on the window
    lam_c = 0.5 * (lam[0] + lam[-1])
    x = (lam - lam_c) * 1e9
    width = float(np.ptp(x)) or 1.0

    def unpack(v):
        if complex_data:
            phi, psi, x0, g = v
        else:
            phi, x0, g = v
            psi = 0.0
        return FanoParams(phi, psi, lam_c + x0 * 1e-9, abs(g) * 1e-9 + 1e-30, 0.0, branch)

    def residuals(v):
        p = unpack(v)
        m = fano_rt(p, lam)
        if complex_data:
            d = np.concatenate([m.r - r, m.t - t])
            return np.concatenate([d.real, d.imag])
        return np.abs(m.t) ** 2 - Tdata

    starts = []
    if guess is not None:
        g0 = [guess.phi, guess.psi, (guess.lambda0 - lam_c) * 1e9, guess.gamma * 1e9]
        starts.append(g0 if complex_data else [g0[0]] + g0[2:])
    else:
        x_dip = x[int(np.argmin(Tdata))]
        edge_t = None
        if complex_data:
            edge = np.r_[0, -1]
            edge_t = t[edge].mean()
            edge_r = r[edge].mean()
            psi0 = float(np.angle(edge_t)) if abs(edge_t) > abs(edge_r) else float(np.angle(edge_r / 1j))
        for phi0 in np.linspace(-1.4, 1.4, 8):
            for gfrac in (0.05, 0.15, 0.4):
                g0 = gfrac * width
                # lambda1 = lambda0 - branch * gamma * tan(phi): seed lambda0 from the dip
                x0 = x_dip + branch * g0 * np.tan(phi0)
                starts.append([phi0, psi0, x0, g0] if complex_data else [phi0, x0, g0])

    best = None
    trace = []
    for v0 in starts:
        try:
            sol = least_squares(residuals, v0, method="lm", xtol=1e-15, ftol=1e-15,
                                gtol=1e-15, max_nfev=4000)
        except (ValueError, FloatingPointError):
            continue
        trace.append(float(sol.cost))
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None or not np.all(np.isfinite(best.x)):
        raise FitDiverged("no start converged", trace)
    rms = float(np.sqrt(np.mean(best.fun**2)))
    scale = 1.0 if complex_data else max(np.ptp(Tdata), 1e-12)
    if rms > 0.2 * scale:
        raise FitDiverged(f"residual rms {rms:.3g} too large", trace)

    p = unpack(best.x)
    # canonical representation: phi in (-pi/2, pi/2]
    if p.phi > np.pi / 2 or p.phi <= -np.pi / 2:
        k = np.round(p.phi / np.pi)
        p = replace(p, phi=p.phi - k * np.pi, psi=p.psi + k * np.pi)
    p = replace(p, psi=float(np.angle(np.exp(1j * p.psi))))

    J = best.jac
    dof = max(best.fun.size - J.shape[1], 1)
    s2 = 2 * best.cost / dof
    try:
        cov = np.linalg.pinv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov = np.full((J.shape[1],) * 2, np.nan)
    # units: lambda0, gamma columns are in nm -> convert to m
    conv = np.ones(J.shape[1])
    conv[-2:] = 1e-9
    cov = cov * np.outer(conv, conv)
    if not complex_data:
        full = np.zeros((4, 4))
        full[np.ix_([0, 2, 3], [0, 2, 3])] = cov
        cov = full
    try:
        lam1 = zero_transmission_wavelength(p).wavelength
    except NoZero:
        lam1 = None
    return FanoFit(p, cov, rms, lam1, int(lam.size), trace)


def calibrate_gamma_loss(p: FanoParams, one_minus_R: float) -> FanoParams:
    """Return ``p`` with ``gamma_loss`` set so that ``1 - |r|^2`` at the
    lossless transmission zero equals ``one_minus_R``."""
    if not 0 < one_minus_R < 1:
        raise ValueError("one_minus_R must lie in (0, 1)")
    lam1 = zero_transmission_wavelength(replace(p, gamma_loss=0.0)).wavelength

    def excess(gl):
        return 1 - abs(lossy_fano_rt(replace(p, gamma_loss=gl), lam1).r) ** 2 - one_minus_R

    hi = p.gamma * 1e-6
    while excess(hi) < 0:
        hi *= 4
        if hi > 1e3 * p.gamma:
            raise ValueError("target loss not reachable")
    gl = brentq(excess, 0.0, hi, xtol=1e-30, rtol=1e-14)
    return replace(p, gamma_loss=gl)
