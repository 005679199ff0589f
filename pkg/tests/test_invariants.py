import numpy as np
import pytest

from atomfunnel import defaults
from atomfunnel.analysis import guided_spectrum_model, trapped_spectrum_model
from atomfunnel.cavityqed import (
    AtomCouplingConfig,
    CouplingMap,
    RingParams,
    bare_transmission,
    polarized_transmission,
    total_transmission,
)
from atomfunnel.constants import M_CS
from atomfunnel.fields import BeamParams, FunnelProfile, funnel_field, gaussian_beam_field
from atomfunnel.trajectory import IntegratorConfig, coupling_series, integrate

TWO_PI = 2 * np.pi
RING = RingParams()
BEAM = BeamParams(15e-3, 7e-6, 935.3e-9)


@pytest.fixture(scope="module")
def plugged():
    return defaults.plugged_funnel()


@pytest.mark.parametrize("z", [100e-6, 150e-6, 300e-6, 1e-3])
def test_funnel_matches_free_beam_far_from_surface(z):
    w = BEAM.width(z)
    x = np.linspace(-2 * w, 2 * w, 17)
    pts = np.stack([x, 0.3 * x, np.full_like(x, z)], -1)
    a = funnel_field(FunnelProfile(BEAM), pts).intensity
    b = gaussian_beam_field(BEAM, pts).intensity
    assert np.allclose(a, b, rtol=0.01)


def test_funnel_width_is_continuous():
    prof = FunnelProfile(BEAM)
    z = np.geomspace(1e-9, 1e-3, 4001)
    w = prof.width(z)
    dz = 1e-12 * np.maximum(z, 1e-6)
    slope = np.abs(prof.width(z + dz) - w) / dz
    # neighbouring grid points never differ by more than the local slope allows
    bound = 2 * np.maximum(slope[:-1], slope[1:]) * np.diff(z) + 1e-15
    assert np.all(np.abs(np.diff(w)) <= bound)


def test_time_reversal_returns_to_start(plugged):
    cfg = IntegratorConfig(duration=2e-3)
    r0, v0 = np.array([1e-6, -2e-6, 150e-6]), np.array([0.003, 0.0, -0.02])
    fwd = integrate((r0, v0), plugged, cfg)
    back = integrate((fwd.r[-1], -fwd.v[-1]), plugged, cfg)
    assert np.linalg.norm(back.r[-1] - r0) / np.linalg.norm(r0) < 1e-6


def test_taper_pumps_transverse_energy(plugged):
    cfg = IntegratorConfig(duration=1e-3, record_dt=2e-7)
    tr = integrate((np.array([0.4e-6, 0.0, 25e-6]), np.array([0.0, 0.0, -0.1])), plugged, cfg)
    z = tr.r[:, 2]
    before = np.arange(z.size) < np.argmin(z)
    kx = 0.5 * M_CS * tr.v[:, 0] ** 2
    kz = 0.5 * M_CS * tr.v[:, 2] ** 2
    bands = [(15e-6, 25e-6), (5e-6, 10e-6), (1e-6, 3e-6), (0.3e-6, 1e-6)]
    mean_kx = [kx[before & (z > lo) & (z < hi)].mean() for lo, hi in bands]
    assert np.all(np.diff(mean_kx) > 0)
    # the barrier takes the longitudinal energy away before the turning point
    assert kz[np.argmin(z)] < 0.05 * kz[before].max()


def test_zero_coupling_reduces_to_bare_cavity():
    d = TWO_PI * np.linspace(-80e6, 80e6, 33)
    t0 = bare_transmission(RING)
    assert np.allclose(total_transmission(d, AtomCouplingConfig(0.0), RING), t0, rtol=1e-14)
    assert np.allclose(polarized_transmission(d, 0.0, RING), t0, rtol=1e-14)


def test_unshifted_spectrum_is_symmetric():
    d = TWO_PI * np.linspace(-50e6, 50e6, 41)
    curve = total_transmission(d, AtomCouplingConfig(TWO_PI * 70e6), RING)
    assert np.allclose(curve, curve[::-1], rtol=1e-12)


def test_fit_models_are_linear_in_amplitude():
    gmap = CouplingMap()
    t = np.linspace(0, 4e-6, 200)
    r = np.column_stack([np.zeros_like(t), np.zeros_like(t), 140e-9 + np.abs(300e-9 - 1.5e5 * t * 1e-3)])
    series = [coupling_series((t, r), gmap)]
    det = np.linspace(-30e6, 30e6, 13)
    one = guided_spectrum_model(1e5, series, det) - 1
    two = guided_spectrum_model(2e5, series, det) - 1
    assert np.allclose(two, 2 * one, rtol=1e-13, atol=0)
    trap = (TWO_PI * 190e3, TWO_PI * 550e3)
    a = trapped_spectrum_model(0.05, 222e-9, 113e-6, trap, gmap, det) - 1
    b = trapped_spectrum_model(0.10, 222e-9, 113e-6, trap, gmap, det) - 1
    assert np.allclose(b, 2 * a, rtol=1e-13, atol=0)
