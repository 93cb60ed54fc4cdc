import numpy as np
import pytest
from scipy.constants import c

from oracles import guided_root_bruteforce
from pcsmirror.guided import (
    FIRST_ORDERS, DiffractionOrder, GuidedModeSolution, Inconsistent, NoRoot, SlabSpec,
    band_overlay, bands_to_csv, classify_symmetry, dispersion_omega, fresnel_te, fresnel_tm,
    solve_guided_mode,
)
from pcsmirror.rcwa import DEFAULT_LATTICE

SLAB = SlabSpec(200e-9, 2.95)
LAT = DEFAULT_LATTICE
G = 2 * np.pi / LAT


def test_fresnel_te_examples():
    assert fresnel_te(1e7, 1e7) == 0
    assert abs(fresnel_te(1e7, -1j * 1e7)) == pytest.approx(1, abs=1e-15)
    val = fresnel_te(1e7, -0.5e7j)
    assert val == pytest.approx((-0.5e7j - 1e7) / (1e7 - 0.5e7j), abs=1e-15)
    assert abs(val) == pytest.approx(1, abs=1e-15)


def test_fresnel_tm_examples():
    assert fresnel_tm(2.95e7, 1e7, 2.95) == 0
    assert abs(fresnel_tm(1e7, -0.3e7j, 2.95)) == pytest.approx(1, abs=1e-15)
    val = fresnel_tm(1e7, -0.5e7j, 2.95)
    assert val == pytest.approx((1e7 + 2.95 * 0.5e7j) / (1e7 - 2.95 * 0.5e7j), abs=1e-15)


def test_dispersion_examples():
    w10 = dispersion_omega(0.0, DiffractionOrder(1, 0), 3e6, LAT, 2.95)
    w01 = dispersion_omega(0.0, DiffractionOrder(0, 1), 3e6, LAT, 2.95)
    assert w10 == w01
    assert dispersion_omega(0.0, DiffractionOrder(1, 0), 0.0, LAT, 2.95) == pytest.approx(
        c * G / np.sqrt(2.95), rel=1e-15)
    kx = 0.1 * G
    assert dispersion_omega(kx, DiffractionOrder(1, 0), 3e6, LAT, 2.95) != pytest.approx(
        dispersion_omega(kx, DiffractionOrder(-1, 0), 3e6, LAT, 2.95), rel=1e-6)
    with pytest.raises(ValueError):
        dispersion_omega(0.0, DiffractionOrder(1, 0), 0.0, -1.0, 2.95)


def test_te_below_tm_and_symmetries():
    te = solve_guided_mode("TE", DiffractionOrder(1, 0), 0.0, SLAB, LAT)
    tm = solve_guided_mode("TM", DiffractionOrder(1, 0), 0.0, SLAB, LAT)
    assert te.omega < tm.omega
    assert te.xoy_symmetry == -1
    assert tm.xoy_symmetry == +1
    for sol in (te, tm):
        half = sol.reflection * np.exp(-1j * sol.k_zm * sol.thickness)
        assert half * half == pytest.approx(1, abs=1e-9)


@pytest.mark.parametrize("pol", ["TE", "TM"])
def test_mirror_orders_degenerate_at_normal_incidence(pol):
    a = solve_guided_mode(pol, DiffractionOrder(1, 0), 0.0, SLAB, LAT)
    b = solve_guided_mode(pol, DiffractionOrder(-1, 0), 0.0, SLAB, LAT)
    c_ = solve_guided_mode(pol, DiffractionOrder(0, -1), 0.0, SLAB, LAT)
    assert a.omega == pytest.approx(b.omega, rel=1e-12)
    assert a.omega == pytest.approx(c_.omega, rel=1e-12)


@pytest.mark.parametrize("pol", ["TE", "TM"])
@pytest.mark.parametrize("kx", [0.0, 0.05 * G, 0.2 * G])
@pytest.mark.parametrize("order", FIRST_ORDERS)
def test_root_matches_bruteforce_scan(pol, kx, order):
    sol = solve_guided_mode(pol, order, kx, SLAB, LAT)
    kt2 = (kx + order.p_x * G) ** 2 + (order.p_y * G) ** 2
    q = guided_root_bruteforce(pol, kt2, SLAB.thickness, SLAB.epsilon_eff)
    assert sol.k_zm == pytest.approx(q, rel=1e-5)
    assert sol.residual < 1e-9
    # guided: evanescent in air, k_zair on the negative imaginary axis
    assert np.sqrt(kt2) > sol.omega / c
    assert sol.k_zair.real == 0 and sol.k_zair.imag < 0


def test_overlay_flat_bands_and_ordering():
    kx = np.linspace(0, 0.15 * G, 7)
    rows = band_overlay(kx, SLAB, LAT)
    assert len(rows) == 2 * 4 * kx.size
    assert all(r.solution is not None for r in rows)
    keys = [(r.polarization, r.order, r.k_x) for r in rows]
    assert keys == sorted(keys, key=lambda k: (["TE", "TM"].index(k[0]),
                                               FIRST_ORDERS.index(k[1]), k[2]))
    w = {}
    for r in rows:
        w.setdefault((r.polarization, r.order), []).append(r.solution.omega)
    for pol in ("TE", "TM"):
        w10 = np.array(w[(pol, DiffractionOrder(1, 0))])
        for order in (DiffractionOrder(0, 1), DiffractionOrder(0, -1)):
            w01 = np.array(w[(pol, order)])
            assert np.all(np.abs(w01[1:] - w01[0]) < np.abs(w10[1:] - w10[0]))
    # the eight curves order identically to the brute-force oracle at k_x = 0.1 G
    kx1 = 0.1 * G
    ours, ref = [], []
    for pol in ("TE", "TM"):
        for order in FIRST_ORDERS:
            sol = solve_guided_mode(pol, order, kx1, SLAB, LAT)
            kt2 = (kx1 + order.p_x * G) ** 2 + (order.p_y * G) ** 2
            q = guided_root_bruteforce(pol, kt2, SLAB.thickness, SLAB.epsilon_eff)
            ours.append(sol.omega)
            ref.append(c * np.sqrt((kt2 + q * q) / SLAB.epsilon_eff))
    assert list(np.argsort(ours)) == list(np.argsort(ref))


def test_no_root_outside_guided_regime():
    with pytest.raises(NoRoot):
        solve_guided_mode("TE", DiffractionOrder(0, 0), 0.0, SLAB, LAT)
    # failures are reported per point, not raised
    rows = band_overlay([0.0], SlabSpec(200e-9, 2.95), LAT)
    assert all(r.error is None for r in rows)


def test_symmetry_inconsistent_solution_rejected():
    good = solve_guided_mode("TE", DiffractionOrder(1, 0), 0.0, SLAB, LAT)
    bad = GuidedModeSolution(**{**good.__dict__, "k_zm": good.k_zm * 1.01})
    with pytest.raises(Inconsistent):
        classify_symmetry(bad)


def test_slab_validation():
    with pytest.raises(ValueError):
        SlabSpec(200e-9, 0.9)


def test_csv_output():
    text = bands_to_csv(band_overlay([0.0], SLAB, LAT))
    lines = text.strip().splitlines()
    assert lines[0].startswith("#") and "rad/um" in lines[0]
    assert lines[1] == "pol,p_x,p_y,k_x,omega_over_2pi_c,symmetry"
    assert len(lines) == 2 + 8
