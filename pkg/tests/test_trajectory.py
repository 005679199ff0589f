import numpy as np
import pytest

from atomfunnel import defaults
from atomfunnel.cavityqed import CouplingMap
from atomfunnel.constants import G_GRAV, M_CS
from atomfunnel.fields import gaussian_beam_field
from atomfunnel.landscape import PotentialLandscape
from atomfunnel.lightshift import HyperfineState, level_shifts
from atomfunnel.trajectory import (
    CloudParams,
    CloudSample,
    CouplingSeries,
    IntegratorConfig,
    TrajectoryError,
    _run_python,
    axial_harmonic_frequency,
    ballistic_entries,
    coupling_series,
    integrate,
    interaction_time,
    oscillation_analysis,
    round_trip_time,
    run_ensemble,
    sample_cloud,
    save_trajectories,
)


@pytest.fixture(scope="module")
def plugged():
    return defaults.plugged_funnel()


def test_free_fall_closed_form():
    tr = integrate((np.array([0, 0, 300e-6]), np.array([0.01, 0, 0.02])), PotentialLandscape(gravity=True),
                   IntegratorConfig(duration=4e-3))
    t = tr.t
    assert np.allclose(tr.r[:, 2], 300e-6 + 0.02 * t - 0.5 * G_GRAV * t**2, atol=1e-12)
    assert np.allclose(tr.r[:, 0], 0.01 * t, atol=1e-12)


def test_compiled_kernel_matches_reference(plugged):
    cfg = IntegratorConfig(duration=2e-3)
    # stays above the fine-step tiers so the pure-Python path is quick
    start = (np.array([1e-6, -2e-6, 150e-6]), np.array([0.0, 0.0, -0.02]))
    s = HyperfineState.ground(2)
    fast = integrate(start, plugged, cfg, state=s)
    ref = _run_python(*start, plugged, s, cfg, M_CS)
    n = min(len(fast.t), len(ref.t))
    assert n > 10
    assert np.allclose(fast.r[:n], ref.r[:n], rtol=1e-6, atol=1e-12)


def test_energy_conserved_in_static_landscape(plugged):
    tr = integrate((np.array([0.0, 0.0, 100e-6]), np.zeros(3)), plugged, IntegratorConfig(duration=20e-3))
    assert np.max(np.abs(tr.energy / tr.energy[0] - 1)) < 1e-6


def test_energy_error_is_second_order_in_step(plugged):
    drift = []
    for f in (1.0, 0.5):
        cfg = IntegratorConfig(duration=5e-3, dt_far=1e-6 * f, dt_mid=50e-9 * f, dt_near=1e-9 * f, fine_dt=5e-9 * f)
        tr = integrate((np.array([0.0, 0.0, 200e-6]), np.zeros(3)), plugged, cfg)
        drift.append(np.max(np.abs(tr.energy / tr.energy[0] - 1)))
    # Verlet: halving every step cuts the energy error ~4x
    assert drift[0] / drift[1] > 3.5


def test_start_validation(plugged):
    with pytest.raises(TrajectoryError):
        integrate((np.array([0, 0, 1e-9]), np.zeros(3)), plugged)
    with pytest.raises(TrajectoryError):
        integrate((np.zeros(2), np.zeros(3)), plugged)
    with pytest.raises(TrajectoryError):
        IntegratorConfig(z_min=1e-6, near_field_z=0.5e-6)


def test_cloud_statistics():
    c = sample_cloud(CloudParams(count=20000, seed=5))
    assert np.allclose(c.positions.mean(0), [0, 0, 250e-6], atol=0.3e-6)
    assert np.allclose(c.positions.std(0), 10e-6, rtol=0.03)
    sigma_v = np.sqrt(1.380649e-23 * 20e-6 / M_CS)
    assert np.allclose(c.velocities.std(0), sigma_v, rtol=0.03)
    assert set(np.unique(c.m_F)) == set(range(-4, 5))
    again = sample_cloud(CloudParams(count=20000, seed=5))
    assert np.array_equal(c.positions, again.positions)


def test_ensemble_is_worker_invariant(plugged):
    cloud = sample_cloud(CloudParams(count=8, seed=3))
    cfg = IntegratorConfig(duration=5e-3)
    a = run_ensemble(cloud, plugged, cfg, workers=1, chunk_size=3)
    b = run_ensemble(cloud, plugged, cfg, workers=2, chunk_size=3)
    for x, y in zip(a.trajectories, b.trajectories):
        assert np.array_equal(x.r, y.r)
        assert x.loaded == y.loaded


def test_ballistic_entries_match_integration():
    cfg = IntegratorConfig(duration=8e-3, near_field_x=50e-6, near_field_y=50e-6, near_field_z=1e-6)
    rng = np.random.default_rng(9)
    pos = np.column_stack([rng.normal(0, 20e-6, 6), rng.normal(0, 20e-6, 6), np.full(6, 200e-6)])
    vel = rng.normal(0, 0.03, (6, 3))
    cloud = CloudSample(pos, vel, np.zeros(6, int))
    t_hit = ballistic_entries(cloud, cfg)
    for k in range(6):
        tr = integrate((pos[k], vel[k]), PotentialLandscape(gravity=True), cfg)
        if np.isfinite(t_hit[k]):
            assert tr.entered_near_field
            assert tr.entries[0, 0] == pytest.approx(t_hit[k], abs=2e-6)
        else:
            assert not tr.entered_near_field


def test_axial_frequency_matches_gaussian_beam_curvature(plugged):
    beam = plugged.funnel.beam
    w = axial_harmonic_frequency(plugged)
    zr = beam.rayleigh_range
    u0 = -level_shifts(gaussian_beam_field(beam, np.array(beam.focus)), "6S1/2", 4, plugged.polarizabilities)[4]
    # on axis I(s) = I0 / (1 + s^2 / zR^2), so U'' = 2 |U0| / zR^2 (up to the O(h^2/zR^2) stencil error)
    assert w == pytest.approx(np.sqrt(2 * u0 / (M_CS * zr**2)), rel=1e-3)
    with pytest.raises(TrajectoryError):
        axial_harmonic_frequency(PotentialLandscape(gravity=True))


def test_round_trip_free_fall():
    land = PotentialLandscape(gravity=True)
    t = round_trip_time(land, 250e-6, z_floor=50e-6)
    assert t == pytest.approx(2 * np.sqrt(2 * 200e-6 / G_GRAV), rel=1e-3)


def test_oscillation_analysis_finds_periodic_peaks():
    t = np.arange(0, 30e-3, 0.5e-3) + 0.25e-3
    counts = 10 * np.exp(-((t - 4e-3) ** 2) / (2 * 1e-6)) + 6 * np.exp(-((t - 13e-3) ** 2) / (2 * 1e-6))
    res = oscillation_analysis(t, counts, smooth=1)
    assert np.allclose(res.peak_times, [4.25e-3, 13.25e-3], atol=0.5e-3)
    assert res.period == pytest.approx(9e-3, abs=0.5e-3)


def test_interaction_time_of_triangle_pulse():
    t = np.linspace(0, 10e-6, 10001)
    gbar = np.clip(1 - np.abs(t - 5e-6) / 5e-6, 0, None)
    s = CouplingSeries(t, gbar, np.zeros((t.size, 9)), np.zeros((t.size, 9)), np.zeros((t.size, 11)))
    assert interaction_time(s, 0.1) == pytest.approx(9e-6, rel=1e-3)
    assert interaction_time(s, 0.5) == pytest.approx(5e-6, rel=1e-3)


def test_coupling_series_without_landscape():
    g_map = CouplingMap()
    t = np.linspace(0, 1e-6, 50)
    r = np.column_stack([np.zeros(50), np.zeros(50), np.linspace(400e-9, 200e-9, 50)])
    s = coupling_series((t, r), g_map)
    assert np.allclose(s.g, g_map.g(r))
    assert np.allclose(s.gbar, g_map.gbar(r))
    assert not s.omega_g.any()


def test_save_trajectories(tmp_path, plugged):
    tr = integrate((np.array([0.0, 0.0, 100e-6]), np.zeros(3)), plugged, IntegratorConfig(duration=1e-3))
    path = tmp_path / "t.csv"
    save_trajectories(path, [tr, tr])
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert rows.shape == (2 * len(tr.t), 10)
    assert np.allclose(rows[: len(tr.t), 4], tr.r[:, 2])
