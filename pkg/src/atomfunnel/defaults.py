"""Calibrated default objects, built from the default run configuration."""

from . import config as _cfg
from .landscape import find_trap_sites
from .lightshift import HyperfineState


def plugged_funnel():
    """Funnel, blue barrier, surface potential and gravity."""
    return _cfg.build_plugged_landscape(_cfg.default_config())


def surface_lattice():
    """Top-beam standing wave with the surface potential."""
    return _cfg.build_lattice_landscape(_cfg.default_config())


def coupling_map():
    return _cfg.build_coupling_map(_cfg.default_config())


def ring():
    return _cfg.build_ring(_cfg.default_config())


def integrator():
    return _cfg.build_integrator(_cfg.default_config())


def cloud(count=None, seed=None):
    c = _cfg.default_config()
    if count is not None:
        c["cloud"]["count"] = int(count)
    if seed is not None:
        c["seed"] = int(seed)
    return _cfg.build_cloud(c)


def first_lattice_site(landscape=None, m=4):
    """Lowest trap site of the surface lattice for a ground ``m`` sublevel."""
    land = surface_lattice() if landscape is None else landscape
    sites = find_trap_sites(land, HyperfineState.ground(m), z_range=(60e-9, 1.2e-6), n_grid=3000)
    if not sites:
        raise ValueError("surface lattice has no trap site")
    return sites[0]
