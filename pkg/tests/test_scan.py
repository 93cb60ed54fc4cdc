import warnings

import numpy as np
import pytest
from scipy.constants import c

from pcsmirror.cavity import (
    MimCavity, SingleEndedCavity, fsr_frequency, fsr_wavelength, mim_eigenmodes,
    mim_transmission_map, nearest_mode_index,
)
from pcsmirror.fano import FanoParams, FitDiverged, calibrate_gamma_loss, lossy_fano_rt
from pcsmirror.scan import (
    BranchesUnresolved, FinesseRecord, InconsistentBand, InsufficientPeaks, MissingSidebands,
    NoPeaks, ScanTrace, detect_peaks, equivalent_absorption, extract_finesse,
    fit_avoided_crossing, fit_lorentzian_triplet, fit_trace, infer_gamma_prime,
    loss_decomposition, synthesize_scan, trace_from_csv, trace_to_csv,
)
from pcsmirror.scattering import MirrorSpec

L0 = 17.4e-3
TC = 455e-6
MEM = calibrate_gamma_loss(FanoParams(0.0, 0.0, 1076e-9, 12e-9), 530e-6)
CAV = SingleEndedCavity(L0, MirrorSpec(TC), lambda lam: lossy_fano_rt(MEM, lam))


def _scan(center, fsrs=3.0, n=150000, **kw):
    h = 0.5 * fsrs * fsr_wavelength(center, L0)
    return synthesize_scan(CAV, center - h, center + h, n, **kw)


def _truth(lam):
    S = lossy_fano_rt(MEM, lam)
    T = np.abs(S.t) ** 2
    return T, 1 - np.abs(S.r) ** 2 - T


def test_scan_trace_validation():
    with pytest.raises(ValueError):
        ScanTrace(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        ScanTrace(np.array([0.0, 0.0, 1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        synthesize_scan(CAV, 1076e-9, 1076e-9, 10)
    with pytest.raises(ValueError):
        synthesize_scan(CAV, 1075e-9, 1076e-9, 10, scan_speed_jitter=1.0)


def test_plain_airy_comb_has_nominal_fsr():
    tr = _scan(1074e-9, sideband_power_ratio=0.0)
    assert tr.sideband_offset == 0
    peaks = fit_trace(tr)
    assert len(peaks) == 3 and not any(p.calibrated for p in peaks)
    rec = extract_finesse(peaks)
    # the membrane phase dispersion adds a small group delay
    assert rec[0].fsr_hz == pytest.approx(fsr_frequency(L0), rel=1e-3)


def test_sidebands_sit_at_offset():
    tr = _scan(1074e-9)
    peaks = fit_trace(tr)
    assert all(p.calibrated for p in peaks)
    for p in peaks:
        assert p.left_gap * p.hz_per_axis == pytest.approx(50e6, rel=1e-4)
        assert p.right_gap * p.hz_per_axis == pytest.approx(50e6, rel=1e-4)


def _lorentz(x, x0, w):
    return 1 / (1 + (2 * (x - x0) / w) ** 2)


def test_noiseless_triplet_exact_recovery():
    x = np.linspace(-1.0, 1.0, 4001)
    x0, w, h, off, s, rho = 0.0123, 0.05, 2.5, 0.01, 0.31, 0.1
    y = off + h * (_lorentz(x, x0, w) + rho * (_lorentz(x, x0 - s, w) + _lorentz(x, x0 + s, w)))
    rate = 50e6 / s
    fit = fit_lorentzian_triplet(ScanTrace(x, y, sideband_offset=50e6, nominal_rate=rate))
    assert fit.calibrated
    assert fit.center == pytest.approx(x0, abs=1e-9)
    assert fit.fwhm == pytest.approx(w, rel=1e-9)
    assert fit.height == pytest.approx(h, rel=1e-9)
    assert fit.offset == pytest.approx(off, abs=1e-9)
    assert fit.sideband_spacing == pytest.approx(s, rel=1e-9)
    assert fit.fwhm_hz == pytest.approx(w * rate, rel=1e-9)
    assert fit.residual_rms < 1e-9


def test_missing_sidebands_fall_back():
    x = np.linspace(-1.0, 1.0, 2001)
    rng = np.random.default_rng(3)
    y = _lorentz(x, 0.0, 0.05) + rng.normal(0, 1e-3, x.size)
    with pytest.warns(MissingSidebands):
        fit = fit_lorentzian_triplet(ScanTrace(x, y, sideband_offset=50e6, nominal_rate=50e6 / 0.3))
    assert not fit.calibrated
    assert fit.fwhm == pytest.approx(0.05, rel=0.02)


def test_jitter_calibration_removes_width_bias():
    lc = 1075.5e-9
    ref = extract_finesse(fit_trace(_scan(lc)))
    true_w = np.array([r.fwhm_hz for r in ref])
    true_g = np.array([r.gamma_rtl for r in ref])
    naive_dev, gam = [], []
    for seed in range(8):
        tr = _scan(lc, scan_speed_jitter=0.05, seed=seed)
        peaks = fit_trace(tr)
        naive_dev.append(np.abs(np.array([p.fwhm * abs(tr.nominal_rate) for p in peaks]) / true_w - 1))
        cal = np.array([p.fwhm_hz for p in peaks])
        assert np.max(np.abs(cal / true_w - 1)) < 1e-4
        gam.append(np.array([r.gamma_rtl for r in extract_finesse(peaks)]) / true_g - 1)
    assert np.max(naive_dev) > 0.02
    assert abs(np.mean(gam)) < 0.003


def test_noiseless_pipeline_at_lambda1():
    rec = extract_finesse(fit_trace(_scan(1076e-9)))
    best = min(rec, key=lambda r: r.gamma_rtl)
    T, L = _truth(best.wavelength)
    assert best.gamma_rtl == pytest.approx(TC + T + L, rel=2e-3)
    assert abs(best.gamma_rtl - 985e-6) < 25e-6
    assert abs(best.finesse - 6385) < 150


def test_peak_detection_errors():
    flat = ScanTrace(np.linspace(0, 1, 100), np.zeros(100))
    with pytest.raises(NoPeaks):
        detect_peaks(flat)
    tr = _scan(1074e-9, fsrs=1.0, n=60000)
    peaks = fit_trace(tr)
    if len(peaks) < 2:
        with pytest.raises(InsufficientPeaks):
            extract_finesse(peaks)
    with pytest.raises(InsufficientPeaks):
        extract_finesse(peaks[:1])
    assert extract_finesse(peaks[:1], fsr_hz=fsr_frequency(L0))[0].fsr_hz == fsr_frequency(L0)


def test_detected_windows_do_not_overlap():
    wins = detect_peaks(_scan(1076.5e-9))
    for a, b in zip(wins, wins[1:]):
        assert a.stop <= b.start + 1


def _records(lams, G, vis):
    return [FinesseRecord(l, fsr_frequency(L0), 0.0, 2 * np.pi / g, g, 0.0, v)
            for l, g, v in zip(lams, G, vis)]


def test_budget_reproduces_one_minus_r():
    lams = np.array([1074e-9, 1076e-9, 1078e-9])
    G = np.array([3000e-6, 985e-6, 3000e-6])
    T = G - TC - 530e-6
    vis = 4 * TC * T / G**2
    b = loss_decomposition(_records(lams, G, vis), TC)
    assert b.one_minus_R == pytest.approx(530e-6, abs=1e-15)
    assert b.lambda1 == 1076e-9
    assert b.alpha_interval[0] <= 1.0 <= b.alpha_interval[1]
    lo = b.T_band[:, 0] + b.L_band[:, 0] + TC
    hi = b.T_band[:, 1] + b.L_band[:, 1] + TC
    assert np.all(lo <= G + 1e-15) and np.all(G <= hi + 1e-15)
    assert np.all(b.T_band[:, 0] <= b.T_band[:, 1])
    out = b.to_json()
    assert out["one_minus_R_ppm"] == pytest.approx(530.0)


def test_budget_flags_violated_assumption():
    lams = np.array([1074e-9, 1076e-9])
    with pytest.raises(InconsistentBand):
        loss_decomposition(_records(lams, [1e-3, 400e-6], [0.1, 0.1]), TC)
    with pytest.raises(InconsistentBand):
        loss_decomposition(_records(lams, [1e-3, 2e-3], [0.1, 0.0]), TC)
    with pytest.raises(InsufficientPeaks):
        loss_decomposition(_records(lams[:1], [1e-3], [0.1]), TC)


@pytest.mark.slow
def test_budget_brackets_truth_on_noisy_scans():
    offsets = [-0.6, -0.3, 0.0, 0.3, 0.6]
    hits = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MissingSidebands)
        for trial in range(10):
            seeds = np.random.SeedSequence(trial).spawn(len(offsets))
            recs = []
            for off, s in zip(offsets, seeds):
                tr = _scan(1076e-9 + off * 1e-9, fsrs=2.2, n=100000, noise_rms=1.4e-6,
                           scan_speed_jitter=0.05, seed=s)
                recs += extract_finesse(fit_trace(tr))
            b = loss_decomposition(recs, TC)
            T, L = _truth(b.wavelength)
            hits.append((b.T_band[:, 0] <= T) & (T <= b.T_band[:, 1])
                        & (b.L_band[:, 0] <= L) & (L <= b.L_band[:, 1]))
    assert np.mean(np.concatenate(hits)) >= 0.95


# ------------------------------------------------------------ avoided crossing

MIM_MEM = FanoParams(0.0, 0.0, 1079.1e-9, 12e-9, 0.01e-9, -1)
MIM_L = 16e-3
MIRROR = MirrorSpec(455e-6)
MIM = MimCavity(MIM_L, MIRROR, lambda lam: lossy_fano_rt(MIM_MEM, lam))


def _crossing(offset_nm, points=20001):
    lc = MIM_MEM.lambda0 + offset_nm * 1e-9
    S = lossy_fano_rt(MIM_MEM, lc)
    mp = mim_eigenmodes(S, MIRROR, MIM_L, nearest_mode_index(S, MIRROR, MIM_L, lc))
    mid = (mp.omega_plus + mp.omega_minus) / (4 * np.pi) - c / lc
    half = abs(mp.delta_nu) / 2 + 20 * mp.gamma_minus / (2 * np.pi)
    det = np.linspace(mid - half, mid + half, points)
    m = mim_transmission_map(MIM, np.linspace(-3e-11, 3e-11, 7), det, lc)
    return fit_avoided_crossing(m, lambda1=MIM_MEM.lambda0), mp


@pytest.mark.parametrize("offset", [-1.0, 0.5])
def test_avoided_crossing_matches_eigenmodes(offset):
    fit, mp = _crossing(offset)
    assert fit.resolved
    assert fit.upper_is_symmetric == (offset < 0)
    assert abs(fit.delta_nu - mp.delta_nu) < 1e-3 * fsr_frequency(MIM_L)
    assert fit.gamma_plus == pytest.approx(mp.gamma_plus, rel=0.01)
    assert fit.gamma_minus == pytest.approx(mp.gamma_minus, rel=0.02)
    # only the antisymmetric branch carries membrane loss
    assert fit.gamma_minus > fit.gamma_plus
    assert abs(fit.gamma_plus - c / (2 * MIM_L) * MIRROR.loss) < 0.01 * fit.gamma_plus
    assert np.isfinite(fit.delta_nu_err)


def test_unresolved_branches_flagged():
    lc = MIM_MEM.lambda0
    fsr = fsr_frequency(MIM_L)
    det = np.linspace(-0.5, 0.5, 4001) * fsr
    m = mim_transmission_map(MIM, np.array([0.0]), det, lc)
    with pytest.warns(BranchesUnresolved):
        fit = fit_avoided_crossing(m, lambda1=lc)
    assert not fit.resolved


def test_gamma_prime_from_closed_form_records():
    lam = MIM_MEM.lambda0 + np.array([-2, -1, -0.5, 0.5, 1, 2]) * 1e-9
    k = c / (2 * MIM_L)
    for gp in (1.0e-11, 0.0):
        gm = k * (4 * 12e-9 * gp / ((12e-9 + gp) ** 2 + (lam - MIM_MEM.lambda0) ** 2) + 455e-6)
        fit = infer_gamma_prime(lam, gm, 12e-9, MIM_MEM.lambda0, 455e-6, MIM_L,
                                gamma_plus=np.full(lam.size, k * 455e-6))
        assert fit.gamma_prime == pytest.approx(gp, abs=1e-16)
        assert fit.plus_excess == pytest.approx(0, abs=1e-6)
    assert set(fit.to_json()) >= {"gamma_prime_nm", "gamma_prime_err_nm"}


@pytest.mark.slow
def test_gamma_prime_round_trip_from_maps():
    lcs, gm, gp = [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BranchesUnresolved)
        for off in (-2, -1, -0.5, 0.5, 1, 2):
            fit, _ = _crossing(off)
            lcs.append(fit.lambda_c)
            gm.append(fit.gamma_minus)
            gp.append(fit.gamma_plus)
    res = infer_gamma_prime(lcs, gm, 12e-9, MIM_MEM.lambda0, 455e-6, MIM_L, gamma_plus=gp)
    assert res.gamma_prime == pytest.approx(1.0e-11, rel=0.1)


def test_equivalent_absorption():
    im = equivalent_absorption(lambda k: 50e-6 + 20.0 * k, 120e-6)
    assert im == pytest.approx(3.5e-6, rel=1e-8)
    with pytest.raises(ValueError):
        equivalent_absorption(lambda k: 50e-6 + k, 10e-6)
    with pytest.raises(ValueError):
        equivalent_absorption(lambda k: 50e-6 + k, 1.0, im_n_max=1e-3)


def test_csv_round_trip():
    tr = _scan(1076e-9, n=2000, noise_rms=1e-6, seed=1)
    back = trace_from_csv(trace_to_csv(tr))
    assert np.array_equal(back.axis, tr.axis) and np.array_equal(back.signal, tr.signal)
    assert back.sideband_offset == tr.sideband_offset
    assert back.nominal_rate == tr.nominal_rate
    assert back.start_frequency == tr.start_frequency
    with pytest.raises(ValueError):
        trace_from_csv("# axis_type: time\naxis,signal\n1,2\n")
