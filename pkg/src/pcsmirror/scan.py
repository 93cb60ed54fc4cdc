"""Synthetic cavity scans and their reduction to finesse and loss budgets.

The pipeline mirrors a laser-scan measurement: the laser carries two
phase-modulation sidebands at a known offset which calibrate the local
scan speed.  Each transmission peak is fitted with three Lorentzians of
a shared width; the sideband spacing converts the width to Hz.
"""

from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
from scipy.constants import c
from scipy.optimize import brentq, least_squares
from scipy.signal import find_peaks, peak_widths

from .cavity import MimCavity, SingleEndedCavity, airy_transmission, mim_transmission
from .fano import FanoParams, FitDiverged

__all__ = [
    "ScanTrace",
    "PeakWindow",
    "PeakFit",
    "FinesseRecord",
    "LossBudget",
    "AvoidedCrossingFit",
    "GammaPrimeFit",
    "NoPeaks",
    "MissingSidebands",
    "InsufficientPeaks",
    "InconsistentBand",
    "BranchesUnresolved",
    "synthesize_scan",
    "detect_peaks",
    "fit_lorentzian",
    "fit_lorentzian_triplet",
    "fit_trace",
    "extract_finesse",
    "loss_decomposition",
    "fit_avoided_crossing",
    "infer_gamma_prime",
    "equivalent_absorption",
    "trace_to_csv",
    "trace_from_csv",
]


class NoPeaks(ValueError):
    pass


class MissingSidebands(RuntimeWarning):
    """Sidebands absent or unresolved; width left in nominal axis calibration."""


class InsufficientPeaks(ValueError):
    pass


class InconsistentBand(ValueError):
    """The loss assumption at the band edge yields an empty interval."""


class BranchesUnresolved(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ScanTrace:
    """Detector signal versus scan axis.

    ``nominal_rate`` is the assumed laser-frequency change per axis unit
    (Hz/s for a time axis) and ``start_frequency`` the laser frequency at
    ``axis[0]``; both are nominal, i.e. uncorrected for scan-speed drifts.
    """

    axis: np.ndarray
    signal: np.ndarray
    axis_type: Literal["time", "frequency"] = "time"
    sideband_offset: float = 0.0
    nominal_rate: float = 1.0
    start_frequency: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        axis = np.asarray(self.axis, float)
        sig = np.asarray(self.signal, float)
        if axis.ndim != 1 or axis.size < 2 or axis.shape != sig.shape:
            raise ValueError("need matching 1-D axis and signal with >= 2 samples")
        if not np.all(np.diff(axis) > 0):
            raise ValueError("axis must be strictly increasing")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "signal", sig)

    def nominal_frequency(self, x):
        return self.start_frequency + self.nominal_rate * (np.asarray(x) - self.axis[0])

    def window(self, lo: int, hi: int) -> "ScanTrace":
        return ScanTrace(self.axis[lo:hi], self.signal[lo:hi], self.axis_type,
                         self.sideband_offset, self.nominal_rate, self.start_frequency
                         + self.nominal_rate * (self.axis[lo] - self.axis[0]), self.metadata)


@dataclass(frozen=True)
class PeakWindow:
    start: int
    stop: int
    peak: int
    fwhm_estimate: float


@dataclass(frozen=True)
class PeakFit:
    center: float
    fwhm: float
    height: float
    offset: float
    sideband_spacing: float
    residual_rms: float
    fwhm_hz: float
    fwhm_hz_err: float
    calibrated: bool
    frequency: float
    left_gap: float = float("nan")
    right_gap: float = float("nan")

    @property
    def hz_per_axis(self) -> float:
        return self.fwhm_hz / self.fwhm


@dataclass(frozen=True)
class FinesseRecord:
    wavelength: float
    fsr_hz: float
    fwhm_hz: float
    finesse: float
    gamma_rtl: float
    gamma_rtl_err: float
    visibility: float


@dataclass(frozen=True)
class LossBudget:
    wavelength: np.ndarray
    gamma_rtl: np.ndarray
    gamma_rtl_err: np.ndarray
    T_band: np.ndarray  # shape (n, 2)
    L_band: np.ndarray  # shape (n, 2)
    alpha_interval: tuple[float, float]
    lambda1: float
    one_minus_R: float

    def to_json(self) -> dict:
        return {
            "wavelength_nm": (self.wavelength * 1e9).tolist(),
            "gamma_rtl_ppm": (self.gamma_rtl * 1e6).tolist(),
            "gamma_rtl_err_ppm": (self.gamma_rtl_err * 1e6).tolist(),
            "T_band_ppm": (self.T_band * 1e6).tolist(),
            "L_band_ppm": (self.L_band * 1e6).tolist(),
            "alpha_interval": list(self.alpha_interval),
            "lambda1_nm": self.lambda1 * 1e9,
            "one_minus_R_ppm": self.one_minus_R * 1e6,
        }


# ---------------------------------------------------------------- synthesis

def synthesize_scan(
    cav: SingleEndedCavity | MimCavity,
    lam_start: float,
    lam_stop: float,
    n_samples: int,
    *,
    sideband_offset: float = 50e6,
    sideband_power_ratio: float = 0.1,
    noise_rms: float = 0.0,
    scan_speed_jitter: float = 0.0,
    jitter_cycles: float = 1.0,
    duration: float = 1.0,
    delta_l: float = 0.0,
    seed=None,
) -> ScanTrace:
    """Detector trace for a laser swept linearly in frequency (in time).

    The carrier has unit power and each sideband carries
    ``sideband_power_ratio`` of it.  ``scan_speed_jitter`` is the relative
    amplitude of a smooth sinusoidal modulation of the sweep rate with
    ``jitter_cycles`` periods over the scan and a random phase; the time
    axis stays uniform so the distortion is only visible through the
    sidebands.
    """
    if not 0 <= scan_speed_jitter < 1:
        raise ValueError("scan_speed_jitter must lie in [0, 1)")
    if lam_start == lam_stop or n_samples < 2:
        raise ValueError("need a non-empty scan")
    rng = np.random.default_rng(seed)
    nu0, nu1 = c / lam_start, c / lam_stop
    t = np.linspace(0.0, duration, n_samples)
    u = t / duration
    phase = rng.uniform(0, 2 * np.pi) if scan_speed_jitter else 0.0
    w = 2 * np.pi * jitter_cycles
    # integral of 1 + j cos(w u + phase), zero at u = 0
    warp = u + scan_speed_jitter * (np.sin(w * u + phase) - np.sin(phase)) / w
    nu = nu0 + (nu1 - nu0) * warp

    def transmission(freq):
        lam = c / freq
        if isinstance(cav, MimCavity):
            return mim_transmission(cav, lam, delta_l)
        return airy_transmission(cav, lam)

    sig = transmission(nu)
    if sideband_power_ratio > 0 and sideband_offset > 0:
        sig = sig + sideband_power_ratio * (transmission(nu + sideband_offset)
                                            + transmission(nu - sideband_offset))
    if noise_rms > 0:
        sig = sig + rng.normal(0.0, noise_rms, sig.shape)
    meta = {
        "lam_start_m": lam_start,
        "lam_stop_m": lam_stop,
        "sideband_power_ratio": sideband_power_ratio,
        "noise_rms": noise_rms,
        "scan_speed_jitter": scan_speed_jitter,
        "jitter_phase": phase,
        "noise_model": "additive gaussian",
    }
    return ScanTrace(t, sig, "time", sideband_offset if sideband_power_ratio > 0 else 0.0,
                     (nu1 - nu0) / duration, nu0, meta)


# ------------------------------------------------------------------ fitting

def _lorentz(x, x0, w):
    return 1.0 / (1.0 + (2 * (x - x0) / w) ** 2)


def _noise_estimate(y):
    d = np.diff(y)
    return 1.4826 * np.median(np.abs(d - np.median(d))) / np.sqrt(2)


def detect_peaks(trace: ScanTrace, prominence: float | None = None) -> list[PeakWindow]:
    """Carrier peaks with non-overlapping windows.

    Candidates closer than 1.5 sideband spacings to a taller peak are
    treated as its sidebands.  Each window spans at least six estimated
    widths and, when sidebands are present, both sidebands.
    """
    y = trace.signal
    if prominence is None:
        prominence = max(10 * _noise_estimate(y), 1e-3 * np.ptp(y))
    idx, props = find_peaks(y, prominence=prominence)
    if idx.size == 0:
        raise NoPeaks("no peak above the prominence threshold")
    widths = peak_widths(y, idx, rel_height=0.5)[0] * np.mean(np.diff(trace.axis))
    sb = abs(trace.sideband_offset / trace.nominal_rate) if trace.sideband_offset else 0.0
    accepted = []
    for k in np.argsort(-y[idx], kind="stable"):
        x = trace.axis[idx[k]]
        guard = max(1.5 * sb, 3 * widths[k])
        if all(abs(x - trace.axis[idx[j]]) > guard for j in accepted):
            accepted.append(k)
    accepted.sort(key=lambda k: idx[k])
    out = []
    for n, k in enumerate(accepted):
        x = trace.axis[idx[k]]
        half = max(3 * widths[k], 1.6 * sb + 3 * widths[k])
        lo_x, hi_x = x - half, x + half
        if n > 0:
            lo_x = max(lo_x, 0.5 * (x + trace.axis[idx[accepted[n - 1]]]))
        if n + 1 < len(accepted):
            hi_x = min(hi_x, 0.5 * (x + trace.axis[idx[accepted[n + 1]]]))
        lo = int(np.searchsorted(trace.axis, lo_x))
        hi = int(np.searchsorted(trace.axis, hi_x, side="right"))
        out.append(PeakWindow(lo, hi, int(idx[k]), float(widths[k])))
    return out


def _covariance(sol) -> np.ndarray:
    J = sol.jac
    dof = max(J.shape[0] - J.shape[1], 1)
    s2 = 2 * sol.cost / dof
    return np.linalg.pinv(J.T @ J) * s2


def _param_sigma(sol, i: int) -> float:
    return float(np.sqrt(max(_covariance(sol)[i, i], 0.0)))


def fit_lorentzian(x, y, guess=None):
    """Single Lorentzian plus offset; returns ``(x0, fwhm, height, offset, rms, sol)``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if guess is None:
        k = int(np.argmax(y))
        base = float(np.median(y))
        w0 = peak_widths(y, [k], rel_height=0.5)[0][0] * np.mean(np.diff(x))
        guess = [x[k], max(w0, 2 * np.mean(np.diff(x))), y[k] - base, base]
    scale = guess[1]
    x_ref = guess[0]

    def res(v):
        x0, w, h, off = v
        return off + h * _lorentz(x, x_ref + x0 * scale, abs(w) * scale) - y

    v0 = [0.0, guess[1] / scale, guess[2], guess[3]]
    sol = least_squares(res, v0, method="lm", xtol=1e-14, ftol=1e-14, max_nfev=2000)
    x0, w, h, off = sol.x
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    return x_ref + x0 * scale, abs(w) * scale, h, off, rms, sol


def fit_lorentzian_triplet(segment: ScanTrace, fwhm_guess: float | None = None) -> PeakFit:
    """Carrier plus two sidebands sharing one width.

    The local axis is rescaled so that the fitted sideband spacing equals
    the known sideband offset.  The width uncertainty comes from the
    off-centering of the carrier between the sidebands, obtained from a
    second fit with independent sideband positions.
    """
    x, y = segment.axis, segment.signal
    if x.size < 8:
        raise FitDiverged("window too short")
    k = int(np.argmax(y))
    base = float(np.median(y))
    dx = float(np.mean(np.diff(x)))
    w0 = fwhm_guess or max(peak_widths(y, [k], rel_height=0.5)[0][0] * dx, 2 * dx)
    h0 = y[k] - base
    rate = segment.nominal_rate
    sb = abs(segment.sideband_offset / rate) if segment.sideband_offset else 0.0
    x_ref = x[k]

    def single():
        x0, w, h, off, rms, sol = fit_lorentzian(x, y, [x_ref, w0, h0, base])
        if not (w > 0 and h > 0 and np.isfinite(x0)):
            raise FitDiverged("single Lorentzian fit failed")
        freq = float(segment.nominal_frequency(x0))
        # fitted width parameter is in units of the guess width
        rel = _param_sigma(sol, 1) * w0 / w
        return PeakFit(x0, w, h, off, float("nan"), rms, abs(w * rate), abs(w * rate) * rel,
                       False, freq)

    if sb == 0:
        return single()
    inside = (x[0] < x_ref - 0.8 * sb) and (x[-1] > x_ref + 0.8 * sb)
    if not inside:
        return single()

    # units: axis in widths relative to the carrier
    def model3(v, centers_free=False):
        if centers_free:
            x0, w, h, off, rho, sl, sr = v
        else:
            x0, w, h, off, rho, s = v
            sl = sr = s
        w = abs(w)
        xc = x_ref + x0 * w0
        return off + h * (_lorentz(x, xc, w * w0)
                          + rho * (_lorentz(x, xc - sl * w0, w * w0)
                                   + _lorentz(x, xc + sr * w0, w * w0)))

    s0 = sb / w0
    v0 = [0.0, 1.0, h0, base, 0.1, s0]
    noise = _noise_estimate(y)
    sol = least_squares(lambda v: model3(v) - y, v0, method="lm", xtol=1e-14, ftol=1e-14,
                        max_nfev=4000)
    x0, w, h, off, rho, s = sol.x
    w = abs(w)
    if not (np.all(np.isfinite(sol.x)) and h > 0):
        raise FitDiverged("triplet fit failed")
    if rho * h < 3 * noise or rho <= 0 or not (0.5 * s0 < s < 1.5 * s0):
        warnings.warn("sidebands not resolved; uncalibrated width", MissingSidebands)
        return single()
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    free = least_squares(lambda v: model3(v, True) - y, list(sol.x) + [s], method="lm",
                         xtol=1e-14, ftol=1e-14, max_nfev=4000)
    sl, sr = abs(free.x[5]), abs(free.x[6])
    off_center = abs(sl - sr) / 2
    spacing = s * w0
    hz_per_axis = segment.sideband_offset / spacing
    fwhm = w * w0
    fwhm_hz = fwhm * hz_per_axis
    # off-centering between the sidebands plus the statistical error of w / s
    cov = _covariance(sol)
    grad = np.zeros(6)
    grad[1], grad[5] = 1 / w, -1 / s
    stat = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    fwhm_err = fwhm_hz * float(np.hypot(off_center / s, stat))
    center = x_ref + x0 * w0
    return PeakFit(center, fwhm, h, off, spacing, rms, fwhm_hz, fwhm_err, True,
                   float(segment.nominal_frequency(center)), sl * w0, sr * w0)


def fit_trace(trace: ScanTrace, prominence: float | None = None, threads: int = 1) -> list[PeakFit]:
    """Detect and fit every carrier peak, in axis order."""
    wins = detect_peaks(trace, prominence)

    def one(win):
        return fit_lorentzian_triplet(trace.window(win.start, win.stop), win.fwhm_estimate)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, wins))
    return [one(w) for w in wins]


def _fsr_poly(x, rate, cal, deg):
    n = x.size
    X = x[-1] - x[0]
    xi = (x - x[0]) / X
    k = np.arange(deg + 1)
    # unknowns: a_0..a_deg, FSR; rate rows rescaled to Hz per peak spacing
    A_pos = np.hstack([xi[:, None] ** k, -np.arange(n)[:, None]])
    A_rate = np.hstack([k * xi[cal, None] ** np.clip(k - 1, 0, None) / X,
                        np.zeros((int(cal.sum()), 1))])
    w = X / max(n - 1, 1)
    A = np.vstack([A_pos, A_rate * w])
    b = np.concatenate([np.zeros(n), rate[cal] * w])
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    slope = (k[1:] * xi[:, None] ** (k[1:] - 1)) @ sol[1:-1] / X
    return float(abs(sol[-1])), np.abs(slope)


def _global_fsr(peaks: list[PeakFit]) -> tuple[float, float, np.ndarray]:
    """FSR, its interpolation uncertainty, and the local rate at each peak.

    The uncertainty is the change of the FSR when the polynomial order is
    lowered by one.
    """
    x = np.array([p.center for p in peaks])
    rate = np.array([p.hz_per_axis for p in peaks])
    cal = np.array([p.calibrated for p in peaks])
    if not cal.any():
        cal[:] = True  # nominal calibration only
    n = x.size
    deg = max(1, min(2 * n - 3, 9, n + int(cal.sum()) - 3))
    fsr, slope = _fsr_poly(x, rate, cal, deg)
    err = abs(fsr - _fsr_poly(x, rate, cal, deg - 1)[0]) if deg > 1 else 0.0
    return fsr, err, slope


def extract_finesse(peaks: list[PeakFit], fsr_hz: float | None = None) -> list[FinesseRecord]:
    """Finesse and round-trip loss per peak.

    The FSR is taken as constant along the scan.  It is estimated jointly
    with a smooth frequency-versus-axis curve that passes through the
    peaks at equal frequency steps and whose slope matches the local
    sideband calibration at each peak (``fsr_hz`` overrides this).
    """
    if len(peaks) < 2 and fsr_hz is None:
        raise InsufficientPeaks("need at least two peaks for the FSR")
    peaks = sorted(peaks, key=lambda p: p.center)
    x = np.array([p.center for p in peaks])
    if fsr_hz is None:
        f_glob, f_err, local_rate = _global_fsr(peaks)
        fsr = np.full(len(peaks), f_glob)
        if any(p.calibrated for p in peaks):
            # borrow the interpolated calibration for peaks without sidebands
            peaks = [p if p.calibrated else
                     replace(p, fwhm_hz=p.fwhm * r, fwhm_hz_err=p.fwhm_hz_err / p.fwhm_hz * p.fwhm * r)
                     for p, r in zip(peaks, local_rate)]
    else:
        fsr = np.full(len(peaks), float(fsr_hz))
        f_err = 0.0
    out = []
    for p, f in zip(peaks, fsr):
        gamma = 2 * np.pi * p.fwhm_hz / f
        rel = p.fwhm_hz_err / p.fwhm_hz if np.isfinite(p.fwhm_hz_err) else 0.0
        err = gamma * float(np.hypot(rel, f_err / f))
        out.append(FinesseRecord(c / p.frequency, float(f), p.fwhm_hz, f / p.fwhm_hz, gamma,
                                 err, p.height))
    return out


def loss_decomposition(records: list[FinesseRecord], T_c: float,
                       lambda1: float | None = None, k_sigma: float = 2.0) -> LossBudget:
    """Split the round-trip loss into membrane transmission and loss bands.

    ``T = alpha * visibility * Gamma^2 / (4 T_c)`` with an unknown detection
    factor ``alpha``, bounded by requiring the membrane loss at the longest
    sampled wavelength to lie in ``[0, Gamma(lambda1)]``.  ``lambda1`` is
    the lowest-loss record unless given.  Round-trip losses enter the
    interval arithmetic as ``Gamma +- k_sigma * err``.
    """
    if len(records) < 2:
        raise InsufficientPeaks("need records across the resonance")
    recs = sorted(records, key=lambda r: r.wavelength)
    lam = np.array([r.wavelength for r in recs])
    G = np.array([r.gamma_rtl for r in recs])
    err = np.array([r.gamma_rtl_err for r in recs])
    dG = k_sigma * err
    vis = np.array([r.visibility for r in recs])
    i1 = int(np.argmin(G)) if lambda1 is None else int(np.argmin(np.abs(lam - lambda1)))
    G1 = G[i1]
    # alpha from the band edge
    Gm, vm = G[-1], vis[-1]
    if vm <= 0:
        raise InconsistentBand("no transmission signal at the band edge")
    per_T = vm * Gm**2 / (4 * T_c)
    alpha_hi = (Gm - T_c) / per_T
    alpha_lo = max((Gm - T_c - G1) / per_T, 0.0)
    if alpha_hi <= 0 or alpha_lo > alpha_hi:
        raise InconsistentBand("loss assumption at the band edge is violated")
    base = vis / (4 * T_c)
    T_lo = alpha_lo * base * np.clip(G - dG, 0, None) ** 2
    T_hi = alpha_hi * base * (G + dG) ** 2
    L_lo = G - dG - T_c - T_hi
    L_hi = G + dG - T_c - T_lo
    return LossBudget(lam, G, err, np.column_stack([T_lo, T_hi]), np.column_stack([L_lo, L_hi]),
                      (float(alpha_lo), float(alpha_hi)), float(lam[i1]), float(G1 - T_c))


# ---------------------------------------------------------- avoided crossing

@dataclass(frozen=True)
class AvoidedCrossingFit:
    lambda_c: float
    delta_nu: float
    delta_nu_err: float
    gamma_plus: float
    gamma_plus_err: float
    gamma_minus: float
    gamma_minus_err: float
    resolved: bool
    upper_is_symmetric: bool | None

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def _two_lorentz(x, y):
    """Fit two Lorentzians (independent widths) plus offset; returns sorted by centre."""
    dx = float(np.mean(np.diff(x)))
    idx, _ = find_peaks(y, prominence=max(10 * _noise_estimate(y), 1e-4 * np.ptp(y)))
    if idx.size == 0:
        raise FitDiverged("no peak in the cut")
    idx = idx[np.argsort(-y[idx])][:2]
    widths = peak_widths(y, idx, rel_height=0.5)[0] * dx
    if idx.size == 1:
        return [(x[idx[0]], max(widths[0], 2 * dx), y[idx[0]])], False
    scale = float(max(widths.min(), 2 * dx))
    xr = x[idx[0]]

    def res(v):
        a0, wa, ha, b0, wb, hb, off = v
        return (off + ha * _lorentz(x, xr + a0 * scale, abs(wa) * scale)
                + hb * _lorentz(x, xr + b0 * scale, abs(wb) * scale) - y)

    v0 = [0.0, widths[0] / scale, y[idx[0]], (x[idx[1]] - xr) / scale, widths[1] / scale,
          y[idx[1]], 0.0]
    sol = least_squares(res, v0, method="lm", xtol=1e-14, ftol=1e-14, max_nfev=4000)
    a0, wa, ha, b0, wb, hb, _ = sol.x
    peaks = sorted([(xr + a0 * scale, abs(wa) * scale, ha), (xr + b0 * scale, abs(wb) * scale, hb)])
    return peaks, True


def fit_avoided_crossing(map_: dict, lambda1: float | None = None, neighbours: int = 3,
                         column: int | None = None) -> AvoidedCrossingFit:
    """Splitting and linewidths from the detuning cut at ``delta_l = 0``.

    The symmetric mode is taken as the upper-frequency branch when
    ``lambda_c < lambda1`` and the lower one otherwise; without ``lambda1``
    the upper branch is reported as ``+``.  Uncertainties are standard
    deviations over ``neighbours`` adjacent cuts on each side.
    """
    dl = np.asarray(map_["delta_l"])
    det = np.asarray(map_["detuning"])
    Tm = np.asarray(map_["transmission"])
    lam_c = float(map_["lambda_c"])
    j0 = int(np.argmin(np.abs(dl))) if column is None else column
    upper_sym = None if lambda1 is None else bool(lam_c < lambda1)

    def cut(j):
        peaks, ok = _two_lorentz(det, Tm[j])
        if not ok:
            return None
        (lo_x, lo_w, _), (hi_x, hi_w, _) = peaks
        if upper_sym is False:
            return np.array([lo_x - hi_x, lo_w, hi_w]), peaks
        return np.array([hi_x - lo_x, hi_w, lo_w]), peaks

    main = cut(j0)
    if main is None:
        warnings.warn("only one branch found", BranchesUnresolved)
        (x0, w0, _), = _two_lorentz(det, Tm[j0])[0]
        g = 2 * np.pi * w0
        return AvoidedCrossingFit(lam_c, 0.0, float("nan"), g, float("nan"), g, float("nan"),
                                  False, upper_sym)
    vals, peaks = main
    resolved = abs(vals[0]) >= 0.5 * 0.5 * (vals[1] + vals[2])
    if not resolved:
        warnings.warn("splitting below half the mean width", BranchesUnresolved)
    others = []
    for j in range(max(j0 - neighbours, 0), min(j0 + neighbours + 1, len(dl))):
        if j == j0:
            continue
        try:
            got = cut(j)
        except FitDiverged:
            got = None
        if got is not None:
            others.append(got[0])
    errs = np.std(np.vstack([vals] + others), axis=0) if others else np.full(3, np.nan)
    return AvoidedCrossingFit(lam_c, float(vals[0]), float(errs[0]),
                              float(2 * np.pi * vals[1]), float(2 * np.pi * errs[1]),
                              float(2 * np.pi * vals[2]), float(2 * np.pi * errs[2]),
                              bool(resolved), upper_sym)


@dataclass(frozen=True)
class GammaPrimeFit:
    gamma_prime: float
    gamma_prime_err: float
    residual_rms: float
    plus_excess: float
    plus_excess_err: float

    def to_json(self) -> dict:
        return {
            "gamma_prime_nm": self.gamma_prime * 1e9,
            "gamma_prime_err_nm": self.gamma_prime_err * 1e9,
            "residual_rms_rad_s": self.residual_rms,
            "gamma_plus_excess_rad_s": self.plus_excess,
            "gamma_plus_excess_err_rad_s": self.plus_excess_err,
        }


def infer_gamma_prime(lambda_c, gamma_minus, gamma: float, lambda_center: float,
                      mirror_loss: float, l: float, gamma_plus=None,
                      sigma=None) -> GammaPrimeFit:
    """Fit ``gamma_-(lambda_c) = (c/2l)(L_-(lambda_c; gamma') + L')``.

    ``L_- = 4 gamma gamma' / ((gamma + gamma')^2 + (lambda - lambda_center)^2)``.
    Widths are FWHM in rad/s.  When ``gamma_plus`` is given its mean excess
    over ``(c/2l) L'`` is reported as a consistency check.
    """
    lam = np.asarray(lambda_c, float)
    gm = np.asarray(gamma_minus, float)
    if lam.size < 1:
        raise InsufficientPeaks("no records")
    w = np.ones_like(gm) if sigma is None else 1.0 / np.asarray(sigma, float)
    k = c / (2 * l)

    def model(gp):
        return k * (4 * gamma * gp / ((gamma + gp) ** 2 + (lam - lambda_center) ** 2) + mirror_loss)

    def res(v):
        return (model(v[0] * 1e-12) - gm) * w

    # initial guess from the largest excess
    excess = max(float(np.max(gm / k - mirror_loss)), 0.0)
    g0 = excess * gamma / 4 / 1e-12 if excess > 0 else 1.0
    sol = least_squares(res, [g0], method="lm", xtol=1e-15, ftol=1e-15, max_nfev=2000)
    if not np.all(np.isfinite(sol.x)):
        raise FitDiverged("gamma' fit did not converge")
    gp = float(sol.x[0]) * 1e-12
    J = sol.jac
    dof = max(lam.size - 1, 1)
    s2 = 2 * sol.cost / dof
    err = float(np.sqrt(s2 / (J.T @ J)[0, 0])) * 1e-12 if (J.T @ J)[0, 0] > 0 else float("nan")
    resid = float(np.sqrt(np.mean(((model(gp) - gm)) ** 2)))
    if gamma_plus is not None:
        ex = np.asarray(gamma_plus, float) - k * mirror_loss
        pe, pe_err = float(np.mean(ex)), float(np.std(ex) / np.sqrt(max(ex.size, 1)))
    else:
        pe, pe_err = float("nan"), float("nan")
    return GammaPrimeFit(gp, err, resid, pe, pe_err)


def equivalent_absorption(loss_at: Callable[[float], float], target_loss: float,
                          im_n_max: float = 1e-3) -> float:
    """Imaginary index reproducing ``target_loss``.

    ``loss_at(im_n)`` returns the modelled loss (for example ``1 - R`` of an
    RCWA solve at the resonance) for a given extinction.
    """
    f = lambda k: loss_at(k) - target_loss
    if f(0.0) > 0:
        raise ValueError("target loss below the lossless value")
    if f(im_n_max) < 0:
        raise ValueError("target loss not reached within im_n_max")
    return float(brentq(f, 0.0, im_n_max, xtol=1e-12, rtol=1e-10))


# ---------------------------------------------------------------------- I/O

def trace_to_csv(trace: ScanTrace) -> str:
    buf = io.StringIO()
    buf.write(f"# axis_type: {trace.axis_type}\n")
    buf.write(f"# sideband_offset_hz: {float(trace.sideband_offset)!r}\n")
    buf.write(f"# nominal_rate_hz_per_unit: {float(trace.nominal_rate)!r}\n")
    buf.write(f"# start_frequency_hz: {float(trace.start_frequency)!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "signal"])
    for a, s in zip(trace.axis, trace.signal):
        w.writerow([repr(float(a)), repr(float(s))])
    return buf.getvalue()


def trace_from_csv(text: str) -> ScanTrace:
    head = {}
    rows = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            head[key.strip()] = val.strip()
        elif line and not line.startswith("axis"):
            a, s = line.split(",")
            rows.append((float(a), float(s)))
    try:
        data = np.array(rows)
        return ScanTrace(data[:, 0], data[:, 1], head.get("axis_type", "time"),
                         float(head.get("sideband_offset_hz", 0.0)),
                         float(head.get("nominal_rate_hz_per_unit", 1.0)),
                         float(head.get("start_frequency_hz", 0.0)))
    except (KeyError, IndexError, ValueError) as err:
        raise ValueError(f"malformed trace file: {err}") from err
