import warnings

import numpy as np
import pytest
from scipy.special import j1

from oracles import airy_slab, hole_coefficient_quadrature
from pcsmirror.materials import ConstantIndex
from pcsmirror.rcwa import (
    DEFAULT_LATTICE, CrystalSpec, DiffractionWarning, GridTooCoarse, NonConvergedWarning,
    PlaneWaveExcitation, convolve_spectrometer, effective_epsilon, epsilon_fourier,
    fill_factor, lattice_from_fill_factor, solve, spectrum,
)
from pcsmirror.scattering import passivity_check

SPEC = CrystalSpec(DEFAULT_LATTICE, 276e-9, 200e-9, ConstantIndex(2.0))


def test_effective_epsilon_examples():
    assert effective_epsilon(0.0, 1.0, 4.0) == 4.0
    assert effective_epsilon(1.0, 1.0, 4.0) == 1.0
    # 2.95 needs a larger fill factor than 0.306 at n = 2
    assert effective_epsilon(0.306, 1.0, 4.0) == pytest.approx(3.082)
    with pytest.raises(ValueError):
        effective_epsilon(1.2, 1.0, 4.0)


def test_fill_factor_examples():
    assert lattice_from_fill_factor(276e-9, 0.306) == pytest.approx(884.4e-9, rel=1e-4)
    assert fill_factor(CrystalSpec(DEFAULT_LATTICE, 0.0, 200e-9)) == 0
    assert fill_factor(CrystalSpec(884.4e-9, 285e-9, 200e-9)) == pytest.approx(0.326, abs=1e-3)


def test_epsilon_fourier_zero_order_and_quadrature():
    lam = 1.1e-6
    e0 = epsilon_fourier(SPEC, np.zeros(2), lam)
    assert e0 == pytest.approx(effective_epsilon(fill_factor(SPEC), 1.0, 4.0), rel=1e-14)
    g = 2 * np.pi / SPEC.lattice
    e1 = epsilon_fourier(SPEC, np.array([g, 0.0]), lam)
    ref = hole_coefficient_quadrature(g, SPEC.radius, SPEC.lattice, 1.0, 4.0)
    assert e1 == pytest.approx(ref, rel=1e-8)
    closed = (1 - 4) * 2 * np.pi * SPEC.radius / (SPEC.lattice**2 * g) * j1(g * SPEC.radius)
    assert e1 == pytest.approx(closed, rel=1e-12)
    tiny = CrystalSpec(SPEC.lattice, 1e-15, 200e-9, ConstantIndex(2.0))
    assert abs(epsilon_fourier(tiny, np.array([g, 0.0]), lam)) < 1e-16


@pytest.mark.parametrize("pol", ["s", "p"])
@pytest.mark.parametrize("lam,kx", [(1.0e-6, 0.0), (1.15e-6, 1.5e6), (0.95e-6, 3e6)])
def test_unpatterned_slab_matches_airy(pol, lam, kx):
    spec = CrystalSpec(DEFAULT_LATTICE, 0.0, 200e-9, ConstantIndex(2.0))
    res = solve(spec, PlaneWaveExcitation(lam, kx, pol), N=2, convention="E")
    r, t = airy_slab(2.0, 200e-9, lam, kx, pol)
    assert res.S00.r == pytest.approx(r, abs=1e-8)
    assert res.S00.t == pytest.approx(t, abs=1e-8)


def test_field_conventions_differ_by_reflection_sign():
    exc = PlaneWaveExcitation(1.1e-6)
    a = solve(SPEC, exc, 3, convention="E")
    b = solve(SPEC, exc, 3, convention="H")
    assert b.S00.r == pytest.approx(-a.S00.r, abs=1e-14)
    assert b.S00.t == pytest.approx(a.S00.t, abs=1e-14)


def test_energy_conservation_and_passivity():
    rng = np.random.default_rng(3)
    for _ in range(10):
        lam = rng.uniform(0.95e-6, 1.25e-6)
        kx = rng.uniform(0, 0.3) * np.pi / SPEC.lattice
        res = solve(SPEC, PlaneWaveExcitation(lam, kx, rng.choice(["s", "p"])), 4)
        assert abs(res.R_total + res.T_total - 1) < 1e-6
    lossy = CrystalSpec(SPEC.lattice, SPEC.radius, SPEC.thickness, ConstantIndex(2.0, 1e-3))
    for lam in (1.0e-6, 1.14e-6):
        res = solve(lossy, PlaneWaveExcitation(lam), 4)
        assert res.R_total + res.T_total <= 1 + 1e-12
        assert res.absorption > 0
        assert passivity_check(res.S00, 1e-9)


def test_normal_incidence_polarization_independent():
    for lam in (1.0e-6, 1.14e-6):
        s = solve(SPEC, PlaneWaveExcitation(lam, 0.0, "s"), 4)
        p = solve(SPEC, PlaneWaveExcitation(lam, 0.0, "p"), 4)
        assert abs(s.S00.r - p.S00.r) < 1e-8
        assert abs(s.S00.t - p.S00.t) < 1e-8


def test_two_sided_symmetry():
    exc = PlaneWaveExcitation(1.12e-6, 1e6, "p")
    a = solve(SPEC, exc, 4, incidence="left")
    b = solve(SPEC, exc, 4, incidence="right")
    assert abs(a.S00.r - b.S00.r) < 1e-8
    assert abs(a.S00.t - b.S00.t) < 1e-8


def test_higher_orders_evanescent_below_diffraction():
    res = solve(SPEC, PlaneWaveExcitation(1.1e-6, 1e6), 3)
    assert all(v == 0.0 for k, v in res.per_order_powers.items() if k[:2] != (0, 0))
    with pytest.warns(DiffractionWarning):
        solve(SPEC, PlaneWaveExcitation(0.8e-6), 2)


def test_low_truncation_warns():
    with pytest.warns(NonConvergedWarning):
        solve(SPEC, PlaneWaveExcitation(1.1e-6), 1)


def test_convergence_with_truncation():
    exc = PlaneWaveExcitation(1.10e-6)
    t = {N: solve(SPEC, exc, N).S00.t for N in (3, 5, 7)}
    assert abs(t[5] - t[7]) < abs(t[3] - t[5])


def test_laurent_rule_available():
    a = solve(SPEC, PlaneWaveExcitation(1.1e-6), 3, factorization="laurent")
    assert abs(a.R_total + a.T_total - 1) < 1e-6
    with pytest.raises(ValueError):
        solve(SPEC, PlaneWaveExcitation(1.1e-6), 3, factorization="other")


def test_larger_holes_blue_shift_resonance():
    lam = np.linspace(1.10e-6, 1.17e-6, 36)
    big = CrystalSpec(SPEC.lattice, 285e-9, SPEC.thickness, ConstantIndex(2.0))
    t0 = np.abs([r.S00.t for r in spectrum(SPEC, lam, N=4)])
    t1 = np.abs([r.S00.t for r in spectrum(big, lam, N=4)])
    shift = lam[np.argmin(t1)] - lam[np.argmin(t0)]
    assert -12e-9 < shift < -2e-9


def test_transmission_dip_location():
    """Deep TE transmission dip at normal incidence near nu/c = 0.929 / um."""
    lam = np.linspace(1.05e-6, 1.18e-6, 66)
    T = np.array([r.T_total for r in spectrum(SPEC, lam, N=4)])
    nu = 1e-6 / lam[np.argmin(T)]
    assert T.min() < 0.01
    assert nu == pytest.approx(0.929, rel=0.01)


def test_spectrum_thread_count_does_not_change_results():
    lam = np.linspace(1.1e-6, 1.12e-6, 4)
    a = spectrum(SPEC, lam, N=3, threads=1)
    b = spectrum(SPEC, lam, N=3, threads=3)
    assert [x.S00.t for x in a] == [x.S00.t for x in b]


def test_convolution_examples():
    lam = np.linspace(1.0e-6, 1.2e-6, 401)
    flat = np.full_like(lam, 0.7)
    assert np.max(np.abs(convolve_spectrometer(lam, flat) - 0.7)) < 1e-12
    spike = np.zeros_like(lam)
    spike[200] = 1
    out = convolve_spectrometer(lam, spike)
    half = lam[out >= out.max() / 2]
    assert half[-1] - half[0] == pytest.approx(4e-9, abs=1e-9)
    # narrow dips lose more depth than wide ones
    narrow = 1 - 0.9 / (1 + ((lam - 1.05e-6) / 0.2e-9) ** 2)
    wide = 1 - 0.9 / (1 + ((lam - 1.15e-6) / 10e-9) ** 2)
    assert convolve_spectrometer(lam, narrow).min() > convolve_spectrometer(lam, wide).min()
    with pytest.raises(GridTooCoarse):
        convolve_spectrometer(np.linspace(1e-6, 1.2e-6, 20), np.ones(20))
