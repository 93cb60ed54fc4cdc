"""Command-line front end: ``pcsmirror <command> [--config PATH] [--out DIR]``.

Every command writes its tables and a JSON report (which embeds the fully
resolved configuration) atomically into the output directory.  Exit codes:
0 ok, 2 configuration error, 3 numerical failure, 4 I/O error.  Failures
print a one-line JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from scipy.constants import c

from . import cavity, fano, guided, rcwa, scan
from .config import RunConfig, load_config
from .scattering import IllConditioned, MirrorSpec

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

NUMERIC_ERRORS = (
    np.linalg.LinAlgError,
    IllConditioned,
    guided.NoRoot,
    guided.Inconsistent,
    fano.FitDiverged,
    fano.NoZero,
    fano.AmbiguousWindow,
    scan.NoPeaks,
    scan.InsufficientPeaks,
    scan.InconsistentBand,
    cavity.DegenerateChannel,
    rcwa.GridTooCoarse,
    FloatingPointError,
)


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    return f"{float(x):.12g}"


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _table(header: list[str], rows, comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return buf.getvalue()


# ----------------------------------------------------------------- commands

def cmd_guided_bands(cfg: RunConfig, out: Path, args) -> dict:
    gb = cfg.guided_bands
    spec = gb.crystal.build()
    eps_slab = complex(spec.index(gb.wavelength_nm * 1e-9)).real ** 2
    eps_eff = gb.epsilon_eff
    if eps_eff is None:
        eps_eff = float(np.real(rcwa.effective_epsilon(rcwa.fill_factor(spec),
                                                      spec.n_ambient**2, eps_slab)))
    slab = guided.SlabSpec(spec.thickness, eps_eff)
    kx = gb.k_x_rad_per_um.values() * 1e6
    rows = guided.band_overlay(kx, slab, spec.lattice)
    files = {}
    if args.format == "csv":
        _write_atomic(out / "guided_bands.csv", guided.bands_to_csv(rows))
        files["bands"] = "guided_bands.csv"
    else:
        data = [{
            "pol": r.polarization, "p_x": r.order.p_x, "p_y": r.order.p_y,
            "k_x_rad_per_um": r.k_x * 1e-6,
            "omega_over_2pi_c_per_um": None if r.solution is None
            else r.solution.omega / (2 * np.pi * c) * 1e-6,
            "symmetry": None if r.solution is None else r.solution.xoy_symmetry,
            "error": r.error,
        } for r in rows]
        _write_atomic(out / "guided_bands.json", _dump_json(data))
        files["bands"] = "guided_bands.json"
    failed = sum(r.solution is None for r in rows)
    return {"epsilon_eff": eps_eff, "n_points": len(rows), "n_failed": failed, "files": files}


def cmd_band_map(cfg: RunConfig, out: Path, args) -> dict:
    bm = cfg.band_map
    spec = bm.crystal.build()
    lam = bm.wavelength_nm.values() * 1e-9
    kx = bm.k_x_rad_per_um.values() * 1e6
    files = {}
    summary = {}
    for pol in bm.polarizations:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = rcwa.band_map(spec, kx, 1.0 / lam, pol, bm.truncation, threads=args.threads,
                                factorization=bm.factorization)
        R, T = res["R"], res["T"]
        rows = []
        Tc = None
        if bm.spectrometer_fwhm_nm is not None:
            Tc = rcwa.convolve_spectrometer(lam, T, bm.spectrometer_fwhm_nm * 1e-9, axis=-1)
        for i, k in enumerate(kx):
            for j, w in enumerate(lam):
                row = [k * 1e-6, w * 1e9, R[i, j], T[i, j]]
                if Tc is not None:
                    row.append(Tc[i, j])
                rows.append(row)
        header = ["k_x_rad_per_um", "wavelength_nm", "R", "T"] + (["T_convolved"] if Tc is not None else [])
        name = f"band_map_{pol}.csv"
        _write_atomic(out / name, _table(header, rows, f"polarization {pol}; N={bm.truncation}"))
        files[pol] = name
        summary[pol] = {"max_energy_error": float(np.max(np.abs(R + T - 1))),
                        "warnings": sorted({str(w.message) for w in caught})}
    return {"files": files, "summary": summary}


def _read_spectrum(path: str):
    data = np.genfromtxt(path, delimiter=",", names=True, comments="#")
    names = data.dtype.names or ()
    if "wavelength_nm" not in names:
        raise ConfigError("spectrum file needs a wavelength_nm column")
    if any(np.isnan(np.atleast_1d(data[n])).any() for n in names):
        raise ConfigError(f"non-numeric entries in {path}")
    lam = np.atleast_1d(data["wavelength_nm"]) * 1e-9
    if {"re_r", "im_r", "re_t", "im_t"} <= set(names):
        r = data["re_r"] + 1j * data["im_r"]
        t = data["re_t"] + 1j * data["im_t"]
        return lam, r, t, None
    if "T" in names:
        return lam, None, None, np.atleast_1d(data["T"])
    raise ConfigError("spectrum file needs re_r,im_r,re_t,im_t or T columns")


def cmd_fano_fit(cfg: RunConfig, out: Path, args) -> dict:
    ff = cfg.fano_fit
    if ff.spectrum_file is not None:
        lam, r, t, T = _read_spectrum(ff.spectrum_file)
        source = {"spectrum_file": ff.spectrum_file}
    else:
        spec = ff.crystal.build()
        lam = ff.wavelength_nm.values() * 1e-9
        res = rcwa.spectrum(spec, lam, 0.0, ff.polarization, ff.truncation, threads=args.threads)
        r = np.array([x.S00.r for x in res])
        t = np.array([x.S00.t for x in res])
        T = None
        source = {"rcwa": True}
    window = None if ff.window_nm is None else (ff.window_nm[0] * 1e-9, ff.window_nm[1] * 1e-9)
    fit = fano.fit_fano(lam, r, t, T=T, window=window, branch=ff.branch)
    record = fit.to_json()
    _write_atomic(out / "fano_params.json", _dump_json(record))
    return {"source": source, "fit": record, "files": {"params": "fano_params.json"}}


def cmd_cavity_scan(cfg: RunConfig, out: Path, args) -> dict:
    cs = cfg.cavity_scan
    p = cs.membrane.build()
    l0 = cs.length_mm * 1e-3
    mirror = MirrorSpec(cs.input_T_ppm * 1e-6, cs.input_loss_ppm * 1e-6)
    cav = cavity.SingleEndedCavity(l0, mirror, lambda lam: fano.lossy_fano_rt(p, lam))
    sc = cs.scan
    seeds = np.random.SeedSequence(args.seed).spawn(sc.trials * len(sc.centers_nm))
    records = []
    trials = []
    first_trace = None
    for n in range(sc.trials):
        trial_recs = []
        for m, lc_nm in enumerate(sc.centers_nm):
            lc = lc_nm * 1e-9
            half = 0.5 * sc.fsr_count * cavity.fsr_wavelength(lc, l0)
            seed = seeds[n * len(sc.centers_nm) + m]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scan.MissingSidebands)
                tr = scan.synthesize_scan(
                    cav, lc - half, lc + half, sc.samples,
                    sideband_offset=sc.sideband_offset_hz,
                    sideband_power_ratio=sc.sideband_power_ratio, noise_rms=sc.noise_rms,
                    scan_speed_jitter=sc.scan_speed_jitter, seed=seed)
                if first_trace is None:
                    first_trace = tr
                recs = scan.extract_finesse(scan.fit_trace(tr, threads=args.threads))
            trial_recs.extend(recs)
        best = min(trial_recs, key=lambda r: r.gamma_rtl)
        trials.append({"gamma_rtl_ppm": best.gamma_rtl * 1e6, "finesse": best.finesse,
                       "wavelength_nm": best.wavelength * 1e9})
        records.extend(trial_recs if n == 0 else [])
    _write_atomic(out / "scan_trace.csv", scan.trace_to_csv(first_trace))
    rows = [[r.wavelength * 1e9, r.fsr_hz, r.fwhm_hz, r.finesse, r.gamma_rtl * 1e6,
             r.gamma_rtl_err * 1e6, r.visibility] for r in records]
    _write_atomic(out / "finesse.csv", _table(
        ["wavelength_nm", "fsr_hz", "fwhm_hz", "finesse", "gamma_rtl_ppm", "gamma_rtl_err_ppm",
         "visibility"], rows))
    report = {"trials": trials, "files": {"trace": "scan_trace.csv", "finesse": "finesse.csv"}}
    G = np.array([t["gamma_rtl_ppm"] for t in trials])
    F = np.array([t["finesse"] for t in trials])
    report["gamma_rtl_ppm"] = {"mean": float(G.mean()), "std": float(G.std())}
    report["finesse"] = {"mean": float(F.mean()), "std": float(F.std())}
    report["half_bandwidth_hz"] = float(cavity.half_bandwidth(l0, F.mean()))
    if len(records) >= 2:
        try:
            budget = scan.loss_decomposition(records, cs.input_T_ppm * 1e-6)
            report["loss_budget"] = budget.to_json()
        except scan.InconsistentBand as err:
            report["loss_budget"] = {"error": str(err)}
    lam1 = fano.zero_transmission_wavelength(replace(p, gamma_loss=0.0))
    S1 = fano.lossy_fano_rt(p, lam1.wavelength)
    report["ground_truth"] = {
        "lambda1_nm": lam1.wavelength * 1e9,
        "one_minus_R_ppm": (1 - abs(S1.r) ** 2) * 1e6,
        "gamma_prime_nm": p.gamma_loss * 1e9,
        "membrane_T_upper_bound_ppm": float(cavity.transmission_upper_bound(abs(S1.r) ** 2)) * 1e6,
    }
    return report


def cmd_mim_map(cfg: RunConfig, out: Path, args) -> dict:
    mm = cfg.mim_map
    p = mm.membrane.build()
    l = mm.sub_length_mm * 1e-3
    mirror = MirrorSpec(mm.mirror_T_ppm * 1e-6)
    memb = lambda lam: fano.lossy_fano_rt(p, lam)
    cav = cavity.MimCavity(l, mirror, memb)
    lam1 = mm.membrane.lambda1_nm * 1e-9
    fsr = cavity.fsr_frequency(l)
    dl = mm.delta_l_nm.values() * 1e-9
    fits, modes, map_files = [], [], []
    for k, off in enumerate(mm.lambda_c_offsets_nm):
        lc = lam1 + off * 1e-9
        S = memb(lc)
        pair = cavity.mim_eigenmodes(S, mirror, l, cavity.nearest_mode_index(S, mirror, l, lc))
        modes.append({"lambda_c_nm": lc * 1e9, **pair.to_json()})
        mid = 0.5 * (pair.omega_plus + pair.omega_minus) / (2 * np.pi) - c / lc
        half = 0.5 * abs(pair.delta_nu) + mm.detuning_span_widths * max(
            pair.gamma_plus, pair.gamma_minus) / (2 * np.pi)
        det = np.linspace(mid - half, mid + half, mm.detuning_points)
        tmap = cavity.mim_transmission_map(cav, dl, det, lc, threads=args.threads)
        rows = [[dl[i] * 1e9, det[j] / fsr, tmap["transmission"][i, j]]
                for i in range(dl.size) for j in range(det.size)]
        name = f"mim_map_{k:02d}.csv"
        _write_atomic(out / name, _table(["delta_l_nm", "detuning_over_FSR", "transmission"], rows,
                                         f"lambda_c_nm {lc * 1e9:.6f}; FSR_hz {fsr:.9g}"))
        map_files.append(name)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scan.BranchesUnresolved)
            fit = scan.fit_avoided_crossing(tmap, lambda1=lam1, neighbours=mm.neighbours)
        fits.append(fit)
    _write_atomic(out / "mode_pairs.json", _dump_json(modes))
    ok = [f for f in fits if f.resolved]
    report = {"files": {"maps": map_files, "modes": "mode_pairs.json"},
              "avoided_crossing": [f.to_json() for f in fits]}
    if ok:
        gp = scan.infer_gamma_prime([f.lambda_c for f in ok], [f.gamma_minus for f in ok],
                                    p.gamma, lam1, mm.mirror_T_ppm * 1e-6, l,
                                    gamma_plus=[f.gamma_plus for f in ok])
        report["gamma_prime"] = gp.to_json()
    report["ground_truth"] = {"gamma_prime_nm": p.gamma_loss * 1e9}
    return report


COMMANDS = {
    "guided-bands": cmd_guided_bands,
    "band-map": cmd_band_map,
    "fano-fit": cmd_fano_fit,
    "cavity-scan": cmd_cavity_scan,
    "mim-map": cmd_mim_map,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcsmirror", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON or YAML run configuration")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    return ap


def _fail(code: int, kind: str, err: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(err).__name__,
                                 "message": str(err)}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        return _fail(EXIT_CONFIG, "config", ValueError("--threads must be >= 1"))
    try:
        cfg = load_config(args.config)
    except (ValidationError, ValueError) as err:
        return _fail(EXIT_CONFIG, "config", err)
    except OSError as err:
        return _fail(EXIT_IO, "io", err)
    out = Path(args.out)
    try:
        result = COMMANDS[args.command](cfg, out, args)
        report = {
            "command": args.command,
            "seed": args.seed,
            "format": args.format,
            "config": cfg.model_dump(mode="json"),
            "result": result,
        }
        _write_atomic(out / f"{args.command}_report.json", _dump_json(report))
    except ConfigError as err:
        return _fail(EXIT_CONFIG, "config", err)
    except NUMERIC_ERRORS as err:
        return _fail(EXIT_NUMERIC, "numeric", err)
    except OSError as err:
        return _fail(EXIT_IO, "io", err)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
