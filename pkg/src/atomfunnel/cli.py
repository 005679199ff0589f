"""Command-line pipeline runner: ``atomfunnel run | validate | show-defaults``."""

from __future__ import annotations

import argparse
import hashlib
import json
import shutil
import sys
import tempfile
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import config as C
from .analysis import FitError, Spectrum, fit_flux, fit_lifetime, fit_trap, guided_response, synthetic_noise, trapped_spectrum_model
from .calibration import Context, run_checks
from .cavityqed import CavityError, bare_transmission
from .constants import TWO_PI, joule_to_uk
from .fields import FieldError
from .landscape import find_trap_sites
from .lightshift import HyperfineState, LightShiftError, Manifold
from .trajectory import (
    TrajectoryError,
    near_field_statistics,
    oscillation_analysis,
    save_trajectories,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERICAL_ERRORS = (FitError, TrajectoryError, LightShiftError, FieldError, CavityError, FloatingPointError,
                    np.linalg.LinAlgError, ValueError)
BUNDLED_SPECTRUM = "synthetic_guided_spectrum.csv"
TRAJECTORY_DUMP = 50


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    return obj


def write_json(path, record):
    Path(path).write_text(json.dumps(_clean(record), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, columns, fmt="%.10g"):
    data = np.column_stack([np.asarray(c, float) for c in columns])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=fmt)


def write_spectrum(path, detuning, t_over_t0, t0, extra=()):
    """Columns ``delta_nu_mhz, T, T0, T_over_T0`` plus optional named extras."""
    cols = [np.asarray(detuning) / 1e6, np.asarray(t_over_t0) * t0, np.full(len(detuning), t0), t_over_t0]
    names = ["delta_nu_mhz", "T", "T0", "T_over_T0"]
    for name, col in extra:
        names.append(name)
        cols.append(col)
    write_csv(path, names, cols)


# --- scenarios --------------------------------------------------------------

def scenario_potential_map(cfg, out):
    pm = cfg["potential_map"]
    land = C.build_plugged_landscape(cfg)
    z = np.linspace(pm["z_min_nm"], pm["z_max_nm"], pm["z_points"]) * 1e-9
    pts = np.stack([np.zeros_like(z), np.zeros_like(z), z], -1)
    levels = land.level_potentials(pts, Manifold.GROUND, 4)
    ms = range(0, 5)
    write_csv(out / "plugged_linecut.csv", ["z_nm"] + [f"U_m{m}_uK" for m in ms],
              [z * 1e9] + [joule_to_uk(levels[:, m + 4]) for m in ms])
    x = np.linspace(-pm["x_max_um"], pm["x_max_um"], pm["x_points"]) * 1e-6
    X, Z = np.meshgrid(x, z, indexing="ij")
    grid = np.stack([X, np.zeros_like(X), Z], -1)
    u = land.potential(grid, HyperfineState.ground(0))
    write_csv(out / "plugged_map_m0.csv", ["x_um", "z_nm", "U_uK"], [X.ravel() * 1e6, Z.ravel() * 1e9,
                                                                     joule_to_uk(u).ravel()])
    lat = C.build_lattice_landscape(cfg)
    ul = lat.potential(pts, HyperfineState.ground(4))
    write_csv(out / "lattice_linecut.csv", ["z_nm", "U_m4_uK"], [z * 1e9, joule_to_uk(ul)])
    minima = {}
    for m in ms:
        k = int(np.argmin(levels[:, m + 4]))
        minima[f"m{m}"] = {"z_nm": z[k] * 1e9, "U_uK": joule_to_uk(levels[k, m + 4])}
    sites = find_trap_sites(lat, HyperfineState.ground(4), z_range=(60e-9, 1.2e-6), n_grid=3000)
    record = {
        "plugged_minimum": minima,
        "lattice_sites": [
            {"z_nm": s.z * 1e9, "depth_uK": joule_to_uk(s.depth),
             "f_kHz": [w / TWO_PI / 1e3 for w in s.omega]} for s in sites[:5]
        ],
    }
    write_json(out / "potential_summary.json", record)


def scenario_guiding(cfg, out):
    ctx = Context(cfg)
    ens = ctx.ensemble
    stats = near_field_statistics(ens, time_bin=0.5e-3)
    centers = 0.5 * (stats.bin_edges[1:] + stats.bin_edges[:-1])
    osc = oscillation_analysis(centers, stats.arrival_histogram, smooth=5)
    write_csv(out / "arrival_histogram.csv", ["t_ms", "arrivals"], [centers * 1e3, stats.arrival_histogram])
    zc = 0.5 * (stats.z_edges[1:] + stats.z_edges[:-1])
    t = ens.trajectories[0].t
    Tg, Zg = np.meshgrid(t, zc)
    write_csv(out / "z_density.csv", ["t_ms", "z_um", "atoms"], [Tg.ravel() * 1e3, Zg.ravel() * 1e6,
                                                                 stats.density.ravel()])
    save_trajectories(out / "trajectories.csv", ens.trajectories[:TRAJECTORY_DUMP])
    write_json(out / "guiding_summary.json", {
        "n_atoms": len(ens.trajectories),
        "n_loaded": stats.n_loaded,
        "n_entered": stats.n_entered,
        "guided_fraction": stats.guided_fraction,
        "entry_fraction": stats.entry_fraction,
        "peak_times_ms": osc.peak_times * 1e3,
        "mean_peak_spacing_ms": None if osc.period is None else osc.period * 1e3,
    })


def _bundled_spectrum():
    ref = resources.files("atomfunnel") / "data" / BUNDLED_SPECTRUM
    with resources.as_file(ref) as p:
        return Spectrum.from_csv(p)


def scenario_spectrum_guided(cfg, out):
    sp = cfg["spectrum"]
    ctx = Context(cfg)
    data = Spectrum.from_csv(sp["data_csv"]) if sp["data_csv"] else _bundled_spectrum()
    window = sp["probe_window_ms"] * 1e-3
    t_i = ctx.coupling.mean_interaction_time
    fit = fit_flux(data, ctx.series, ctx.ring, t_i, window)
    model = guided_response(ctx.series, data.detuning, ctx.ring, window)
    t0 = float(bare_transmission(ctx.ring))
    write_spectrum(out / "spectrum_guided.csv", data.detuning, model(fit.flux), t0,
                   [("data_T_over_T0", data.values), ("data_error", data.errors)])
    rec = fit.as_record()
    rec.update({"interaction_time_us": t_i * 1e6, "n_series": len(ctx.series),
                "data": str(sp["data_csv"]) if sp["data_csv"] else f"bundled:{BUNDLED_SPECTRUM}"})
    write_json(out / "guided_fit.json", rec)


def scenario_spectrum_trapped(cfg, out):
    tf = cfg["trap_fit"]
    ctx = Context(cfg)
    site = ctx.lattice_site
    trap = (site.omega_x, site.omega_z)
    if tf["data_csv"]:
        data = Spectrum.from_csv(tf["data_csv"])
    else:
        det = np.linspace(tf["detuning_min_mhz"], tf["detuning_max_mhz"], tf["points"]) * 1e6
        clean = trapped_spectrum_model(tf["p"], tf["z_t_nm"] * 1e-9, tf["temperature_uk"] * 1e-6, trap,
                                       ctx.g_map, det, ctx.ring)
        y, err = synthetic_noise(clean, np.random.default_rng(cfg["seed"]), relative=tf["noise_relative"])
        data = Spectrum(det, y, err)
    fit = fit_trap(data, trap, ctx.g_map, ctx.ring)
    curve = trapped_spectrum_model(fit.p, fit.z_t, fit.T_t, trap, ctx.g_map, data.detuning, ctx.ring)
    t0 = float(bare_transmission(ctx.ring))
    write_spectrum(out / "spectrum_trapped.csv", data.detuning, curve, t0,
                   [("data_T_over_T0", data.values), ("data_error", data.errors)])
    rec = fit.as_record()
    rec["trap_f_kHz"] = [w / TWO_PI / 1e3 for w in site.omega]
    rec["site_z_nm"] = site.z * 1e9
    write_json(out / "trap_fit.json", rec)


def scenario_lifetime(cfg, out):
    lt = cfg["lifetime"]
    if lt["data_csv"]:
        rows = np.loadtxt(lt["data_csv"], delimiter=",", skiprows=1, ndmin=2)
        t, y, err = rows[:, 0] * 1e-3, rows[:, 1], rows[:, 2]
    else:
        t = np.linspace(lt["hold_min_ms"], lt["hold_max_ms"], lt["points"]) * 1e-3
        sigma = lt["noise_relative"] * lt["amplitude"]
        rng = np.random.default_rng(cfg["seed"])
        y = 1 + lt["amplitude"] * np.exp(-t / (lt["tau_ms"] * 1e-3)) + rng.standard_normal(t.size) * sigma
        err = np.full(t.size, sigma)
    res = fit_lifetime(t, y, err)
    curve = 1 + res.amplitude * np.exp(-t / res.tau) if np.isfinite(res.tau) else np.ones_like(t)
    write_csv(out / "lifetime.csv", ["hold_ms", "T_over_T0", "error", "fit"], [t * 1e3, y, err, curve])
    write_json(out / "lifetime_fit.json", {
        "tau_ms": res.tau * 1e3, "tau_err_ms": res.error * 1e3, "amplitude": res.amplitude,
        "no_decay": res.no_decay, "flag": res.flagged,
    })


def scenario_calibration_check(cfg, out):
    results = run_checks(Context(cfg))
    for r in results:
        print(r.line())
    write_json(out / "calibration.json", {
        "all_passed": all(r.passed for r in results),
        "checks": [{"number": r.number, "name": r.name, "passed": r.passed, "detail": r.detail,
                    "parts": r.parts, "values": r.values} for r in results],
    })


SCENARIO_RUNNERS = {
    "potential-map": scenario_potential_map,
    "guiding": scenario_guiding,
    "spectrum-guided": scenario_spectrum_guided,
    "spectrum-trapped": scenario_spectrum_trapped,
    "lifetime": scenario_lifetime,
    "calibration-check": scenario_calibration_check,
}


# --- orchestration ------------------------------------------------------------

def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(cfg):
    """Run ``cfg['scenario']`` into ``cfg['output_dir']`` and return the manifest record.

    Outputs are staged in a scratch directory and moved into place only when
    the scenario succeeds, so a failed run leaves nothing behind.
    """
    problems = C.validate(cfg)
    if problems:
        key, msg = problems[0]
        raise C.ConfigError(msg, key)
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    stage = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        SCENARIO_RUNNERS[cfg["scenario"]](cfg, stage)
        write_json(stage / "config.json", cfg)
        files = sorted(p.name for p in stage.iterdir())
        for name in files:
            shutil.move(str(stage / name), str(out / name))
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    manifest = {
        "scenario": cfg["scenario"],
        "config_hash": C.config_hash(cfg),
        "version": __version__,
        "seed": cfg["seed"],
        "workers": cfg["workers"],
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": {name: _sha256(out / name) for name in files},
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def _overrides(args):
    o = {}
    if args.scenario is not None:
        o["scenario"] = args.scenario
    if args.seed is not None:
        o["seed"] = args.seed
    if args.workers is not None:
        o["workers"] = args.workers
    if args.out is not None:
        o["output_dir"] = str(args.out)
    return o


def build_parser():
    ap = argparse.ArgumentParser(prog="atomfunnel", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb, text in (("run", "run a scenario"), ("validate", "check a configuration without running it")):
        p = sub.add_parser(verb, help=text)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--scenario", choices=C.SCENARIOS)
    sub.add_parser("show-defaults", help="print the default configuration as YAML")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verb == "show-defaults":
        sys.stdout.write(yaml.safe_dump(C.default_config(), sort_keys=False))
        return EXIT_OK
    try:
        cfg = C.load_config(args.config, _overrides(args))
    except C.ConfigError as exc:
        print(json.dumps({"error": "config", "key": exc.key, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    if args.verb == "validate":
        problems = C.validate(cfg)
        print(json.dumps({"violations": [{"key": k, "message": m} for k, m in problems]}, indent=2))
        return EXIT_CONFIG if problems else EXIT_OK
    try:
        manifest = run(cfg)
    except C.ConfigError as exc:
        print(json.dumps({"error": "config", "key": exc.key, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(json.dumps({"error": "numerical", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps({"output_dir": cfg["output_dir"], "files": sorted(manifest["files"])}, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
