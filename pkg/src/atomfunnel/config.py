"""Run configuration: YAML with unit-suffixed keys, validation and builders."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .cavityqed import CouplingMap, RingParams
from .constants import LAMBDA_D2
from .fields import BeamParams, FunnelProfile, WGMFieldParams
from .landscape import LatticeParams, PotentialLandscape
from .lightshift import CPParams
from .trajectory import CloudParams, IntegratorConfig

SCENARIOS = ("potential-map", "guiding", "spectrum-guided", "spectrum-trapped", "lifetime", "calibration-check")
TWO_PI = 2 * np.pi

DEFAULTS = {
    "scenario": "potential-map",
    "seed": 20240607,
    "workers": 1,
    "output_dir": "atomfunnel-out",
    "cloud": {
        "count": 4000,
        "temperature_uk": 20.0,
        "center_um": [0.0, 0.0, 250.0],
        "rms_radius_um": [10.0, 10.0, 10.0],
    },
    "funnel": {
        "enabled": True,
        "power_mw": 15.0,
        "waist_um": 7.0,
        "wavelength_nm": 935.3,
        "surface_halfwidth_nm": 200.0,
        "crossover_um": 65.0,
        "taper_power": 3.5,
        "near_field_halfwidth_um": 1.0,
        "near_field_length_um": 0.6,
        "funnel_fraction": 0.1,
    },
    "barrier": {
        "enabled": True,
        "circulating_power_mw": 3.2,
        "wavelength_nm": 849.1,
        "n_eff": 1.9,
        "halfwidth_x_um": 0.5,
        "effective_area_um2": 3.0,
        "chirality": "cw",
    },
    "probe": {
        "wavelength_nm": LAMBDA_D2 * 1e9,
        "n_eff": 1.9,
        "halfwidth_x_um": 0.5,
        "g_ref_mhz": 37.0,
        "z_ref_nm": 252.6,
    },
    "lattice": {
        "power_mw": 200.0,
        "waist_um": 7.0,
        "wavelength_nm": 935.3,
        "reflectivity": 0.3,
        "reflection_phase_pi": 0.92,
        "reflection_halfwidth_nm": 350.0,
    },
    "surface": {"c4_hz_um4": 267.0, "lambda_bar_nm": 136.0, "gravity": True},
    "ring": {"kappa_e_ghz": 2.3, "kappa_i_ghz": 4.8, "delta_c_mhz": 0.0},
    "integrator": {
        "duration_ms": 30.0,
        "dt_far_us": 1.0,
        "dt_mid_ns": 50.0,
        "dt_near_ns": 1.0,
        "z_mid_um": 60.0,
        "z_near_um": 5.0,
        "z_min_nm": 20.0,
        "record_dt_us": 100.0,
        "fine_z_um": 1.0,
        "fine_dt_ns": 5.0,
        "near_field_z_nm": 300.0,
        "near_field_x_nm": 200.0,
        "near_field_y_um": 1.5,
    },
    "potential_map": {
        "z_min_nm": 30.0,
        "z_max_nm": 2000.0,
        "z_points": 400,
        "x_max_um": 1.5,
        "x_points": 61,
    },
    "spectrum": {
        "detuning_min_mhz": -60.0,
        "detuning_max_mhz": 60.0,
        "points": 121,
        "probe_window_ms": 1.0,
        "flux_per_ms": 161.0,
        "noise_relative": 0.02,
        "data_csv": None,
    },
    "trap_fit": {
        "p": 0.10,
        "z_t_nm": 222.0,
        "temperature_uk": 113.0,
        "detuning_min_mhz": -30.0,
        "detuning_max_mhz": 30.0,
        "points": 61,
        "noise_relative": 0.0005,
        "data_csv": None,
    },
    "lifetime": {
        "tau_ms": 4.0,
        "amplitude": 0.15,
        "hold_min_ms": 0.0,
        "hold_max_ms": 12.0,
        "points": 25,
        "noise_relative": 0.10,
        "data_csv": None,
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


def default_config():
    return copy.deepcopy(DEFAULTS)


def _merge(base, override, prefix=""):
    for k, v in override.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise ConfigError("unknown key", path)
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError("expected a mapping", path)
            _merge(base[k], v, path + ".")
        else:
            base[k] = v
    return base


def _check_types(cfg, ref, prefix=""):
    for k, v in ref.items():
        path = f"{prefix}{k}"
        got = cfg[k]
        if isinstance(v, dict):
            _check_types(got, v, path + ".")
        elif isinstance(v, bool):
            if not isinstance(got, bool):
                raise ConfigError("expected true/false", path)
        elif isinstance(v, (int, float)):
            if isinstance(got, bool) or not isinstance(got, (int, float)):
                raise ConfigError("expected a number", path)
            if isinstance(v, int) and not isinstance(got, int):
                raise ConfigError("expected an integer", path)
        elif isinstance(v, list):
            if not isinstance(got, list) or len(got) != len(v) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in got
            ):
                raise ConfigError(f"expected a list of {len(v)} numbers", path)
        elif isinstance(v, str):
            if not isinstance(got, str):
                raise ConfigError("expected a string", path)
        elif v is None and got is not None and not isinstance(got, str):
            raise ConfigError("expected a path or null", path)


def load_config(path=None, overrides=None):
    """Defaults merged with a YAML file and then with ``overrides``."""
    cfg = default_config()
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read configuration: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        _merge(cfg, data)
    if overrides:
        _merge(cfg, overrides)
    _check_types(cfg, DEFAULTS)
    if cfg["scenario"] not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg['scenario']!r}", "scenario")
    return cfg


# run plumbing that cannot change numeric results
_UNHASHED = ("output_dir", "workers")


def config_hash(cfg):
    blob = json.dumps({k: v for k, v in cfg.items() if k not in _UNHASHED}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def validate(cfg):
    """List of ``(key, message)`` violations; empty for a consistent config."""
    out = []

    def need(cond, key, msg):
        if not cond:
            out.append((key, msg))

    positive = {
        "cloud": ("count", "temperature_uk"),
        "funnel": ("power_mw", "waist_um", "wavelength_nm", "surface_halfwidth_nm", "crossover_um",
                   "taper_power", "near_field_halfwidth_um", "near_field_length_um"),
        "barrier": ("circulating_power_mw", "wavelength_nm", "halfwidth_x_um", "effective_area_um2"),
        "probe": ("wavelength_nm", "halfwidth_x_um", "z_ref_nm"),
        "lattice": ("power_mw", "waist_um", "wavelength_nm", "reflection_halfwidth_nm"),
        "surface": ("c4_hz_um4", "lambda_bar_nm"),
        "integrator": tuple(DEFAULTS["integrator"]),
        "spectrum": ("points", "probe_window_ms", "noise_relative"),
        "trap_fit": ("z_t_nm", "temperature_uk", "points", "noise_relative"),
        "lifetime": ("tau_ms", "points", "noise_relative"),
    }
    for sec, keys in positive.items():
        for k in keys:
            need(cfg[sec][k] > 0, f"{sec}.{k}", "must be positive")
    need(cfg["workers"] >= 1, "workers", "must be at least 1")
    need(0 <= cfg["seed"] < 2**64, "seed", "must be an unsigned 64-bit integer")
    need(all(r >= 0 for r in cfg["cloud"]["rms_radius_um"]), "cloud.rms_radius_um", "must be non-negative")
    need(0 <= cfg["funnel"]["funnel_fraction"] <= 1, "funnel.funnel_fraction", "must lie in [0, 1]")
    need(0 <= cfg["lattice"]["reflectivity"] <= 1, "lattice.reflectivity", "must lie in [0, 1]")
    need(cfg["barrier"]["n_eff"] > 1, "barrier.n_eff", "must exceed 1 for an evanescent field")
    need(cfg["probe"]["n_eff"] > 1, "probe.n_eff", "must exceed 1 for an evanescent field")
    need(cfg["barrier"]["chirality"] in ("cw", "ccw"), "barrier.chirality", "must be cw or ccw")
    need(cfg["probe"]["g_ref_mhz"] >= 0, "probe.g_ref_mhz", "must be non-negative")
    need(cfg["ring"]["kappa_e_ghz"] >= 0 and cfg["ring"]["kappa_i_ghz"] >= 0, "ring", "loss rates must be non-negative")
    need(cfg["ring"]["kappa_e_ghz"] + cfg["ring"]["kappa_i_ghz"] > 0, "ring", "total loss rate must be positive")
    it = cfg["integrator"]
    need(it["z_min_nm"] < it["near_field_z_nm"], "integrator.z_min_nm", "surface-loss plane must lie below the near-field threshold")
    need(it["z_near_um"] < it["z_mid_um"], "integrator.z_near_um", "must lie below z_mid_um")
    need(it["near_field_z_nm"] < it["fine_z_um"] * 1e3, "integrator.near_field_z_nm", "must lie below fine_z_um")
    sp = cfg["spectrum"]
    need(sp["detuning_max_mhz"] > sp["detuning_min_mhz"], "spectrum.detuning_max_mhz", "must exceed detuning_min_mhz")
    need(sp["flux_per_ms"] >= 0, "spectrum.flux_per_ms", "must be non-negative")
    need(0 <= cfg["trap_fit"]["p"] <= 1, "trap_fit.p", "must lie in [0, 1]")
    tf = cfg["trap_fit"]
    need(tf["detuning_max_mhz"] > tf["detuning_min_mhz"], "trap_fit.detuning_max_mhz", "must exceed detuning_min_mhz")
    lt = cfg["lifetime"]
    need(lt["hold_max_ms"] > lt["hold_min_ms"] >= 0, "lifetime.hold_max_ms", "hold window must be non-empty")
    pm = cfg["potential_map"]
    need(pm["z_max_nm"] > pm["z_min_nm"] > 0, "potential_map.z_min_nm", "z range must be positive and non-empty")
    need(pm["z_points"] >= 3 and pm["x_points"] >= 3, "potential_map", "need at least 3 points per axis")
    for sec in ("spectrum", "trap_fit", "lifetime"):
        path = cfg[sec]["data_csv"]
        need(path is None or Path(path).is_file(), f"{sec}.data_csv", "file not found")
    return out


# --- builders -------------------------------------------------------------

def build_cloud(cfg) -> CloudParams:
    c = cfg["cloud"]
    return CloudParams(
        count=int(c["count"]),
        temperature=c["temperature_uk"] * 1e-6,
        center=tuple(v * 1e-6 for v in c["center_um"]),
        rms_radii=tuple(v * 1e-6 for v in c["rms_radius_um"]),
        seed=int(cfg["seed"]),
    )


def build_funnel(cfg):
    f = cfg["funnel"]
    if not f["enabled"]:
        return None
    beam = BeamParams(f["power_mw"] * 1e-3, f["waist_um"] * 1e-6, f["wavelength_nm"] * 1e-9)
    return FunnelProfile(
        beam,
        surface_halfwidth=f["surface_halfwidth_nm"] * 1e-9,
        crossover=f["crossover_um"] * 1e-6,
        taper_power=f["taper_power"],
        near_field_halfwidth=f["near_field_halfwidth_um"] * 1e-6,
        near_field_length=f["near_field_length_um"] * 1e-6,
        funnel_fraction=f["funnel_fraction"],
    )


def build_barrier(cfg):
    b = cfg["barrier"]
    if not b["enabled"]:
        return None
    return WGMFieldParams(
        circulating_power=b["circulating_power_mw"] * 1e-3,
        wavelength=b["wavelength_nm"] * 1e-9,
        n_eff=b["n_eff"],
        halfwidth_x=b["halfwidth_x_um"] * 1e-6,
        effective_area=b["effective_area_um2"] * 1e-12,
        chirality=b["chirality"],
    )


def build_cp(cfg):
    s = cfg["surface"]
    return CPParams(s["c4_hz_um4"], s["lambda_bar_nm"] * 1e-9)


def build_plugged_landscape(cfg) -> PotentialLandscape:
    return PotentialLandscape(
        funnel=build_funnel(cfg), barrier=build_barrier(cfg), cp=build_cp(cfg), gravity=cfg["surface"]["gravity"]
    )


def build_lattice_landscape(cfg) -> PotentialLandscape:
    lt = cfg["lattice"]
    top = BeamParams(lt["power_mw"] * 1e-3, lt["waist_um"] * 1e-6, lt["wavelength_nm"] * 1e-9, axis=(0.0, 0.0, -1.0))
    lat = LatticeParams(top, lt["reflectivity"], lt["reflection_phase_pi"] * np.pi, lt["reflection_halfwidth_nm"] * 1e-9)
    return PotentialLandscape(lattice=lat, cp=build_cp(cfg), gravity=cfg["surface"]["gravity"])


def build_coupling_map(cfg) -> CouplingMap:
    p = cfg["probe"]
    probe = WGMFieldParams(wavelength=p["wavelength_nm"] * 1e-9, n_eff=p["n_eff"], halfwidth_x=p["halfwidth_x_um"] * 1e-6)
    return CouplingMap(probe, TWO_PI * p["g_ref_mhz"] * 1e6, (0.0, 0.0, p["z_ref_nm"] * 1e-9))


def build_ring(cfg) -> RingParams:
    r = cfg["ring"]
    return RingParams(TWO_PI * r["kappa_e_ghz"] * 1e9, TWO_PI * r["kappa_i_ghz"] * 1e9, TWO_PI * r["delta_c_mhz"] * 1e6)


def build_integrator(cfg) -> IntegratorConfig:
    it = cfg["integrator"]
    return IntegratorConfig(
        duration=it["duration_ms"] * 1e-3,
        dt_far=it["dt_far_us"] * 1e-6,
        dt_mid=it["dt_mid_ns"] * 1e-9,
        dt_near=it["dt_near_ns"] * 1e-9,
        z_mid=it["z_mid_um"] * 1e-6,
        z_near=it["z_near_um"] * 1e-6,
        z_min=it["z_min_nm"] * 1e-9,
        record_dt=it["record_dt_us"] * 1e-6,
        fine_z=it["fine_z_um"] * 1e-6,
        fine_dt=it["fine_dt_ns"] * 1e-9,
        near_field_z=it["near_field_z_nm"] * 1e-9,
        near_field_x=it["near_field_x_nm"] * 1e-9,
        near_field_y=it["near_field_y_um"] * 1e-6,
    )


def with_seed(cfg, seed):
    out = copy.deepcopy(cfg)
    out["seed"] = int(seed)
    return out


__all__ = [
    "ConfigError", "DEFAULTS", "SCENARIOS", "build_cloud", "build_coupling_map", "build_integrator",
    "build_lattice_landscape", "build_plugged_landscape", "build_ring", "config_hash", "default_config",
    "load_config", "validate", "with_seed",
]
