from fractions import Fraction

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from atomfunnel.analysis import Spectrum, fit_lifetime
from atomfunnel.cavityqed import (
    AtomCouplingConfig,
    RingParams,
    bare_transmission,
    clebsch_gordan_squared,
    lambda_transmission,
    transmission_from_cooperativities,
)
from atomfunnel.constants import M_CS
from atomfunnel.fields import VectorFieldSample
from atomfunnel.landscape import find_trap_sites
from atomfunnel.lightshift import CPParams, Manifold, casimir_polder, default_polarizabilities, level_shifts
from atomfunnel.trajectory import CouplingSeries, interaction_time

TWO_PI = 2 * np.pi
POLS = default_polarizabilities()
rates = st.floats(0.05, 20.0).map(lambda x: TWO_PI * x * 1e9)
detunings = st.floats(-200.0, 200.0).map(lambda x: TWO_PI * x * 1e6)
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@given(rates, rates, detunings)
def test_bare_transmission_is_bounded(ke, ki, dc):
    t0 = bare_transmission(RingParams(ke, ki), dc)
    assert -1e-12 <= t0 <= 1 + 1e-12


@given(st.integers(-4, 4), st.floats(0, 300), detunings, rates, rates)
def test_lambda_system_is_passive(l, g_mhz, delta, ke, ki):
    res = lambda_transmission(l, delta, AtomCouplingConfig(TWO_PI * g_mhz * 1e6), RingParams(ke, ki))
    assert abs(res.t) ** 2 + abs(res.r) ** 2 <= 1 + 1e-9


@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.0, 1.0))
def test_transparency_grows_with_cooperativity(c1, dc, ratio):
    ring = RingParams()
    c2 = c1 + dc
    lo = transmission_from_cooperativities(0.0, c1, ratio * c1, ring)
    hi = transmission_from_cooperativities(0.0, c2, ratio * c2, ring)
    assert hi >= lo - 1e-12


def _field(a, b, c, d, e, f):
    return np.array([a + 1j * b, c + 1j * d, e + 1j * f]) * 1e5


amps = st.floats(-1.0, 1.0)


@given(amps, amps, amps, amps, amps, amps, st.floats(0, 2 * np.pi), st.sampled_from([935.3e-9, 849.1e-9]))
def test_shifts_ignore_global_phase_and_keep_trace(a, b, c, d, e, f, phi, wl):
    E = _field(a, b, c, d, e, f)
    assume(np.linalg.norm(E) > 1e3)
    s1 = level_shifts(VectorFieldSample(E, wl), Manifold.EXCITED, 5, POLS)
    s2 = level_shifts(VectorFieldSample(E * np.exp(1j * phi), wl), Manifold.EXCITED, 5, POLS)
    scale = np.abs(s1).max()
    assert np.allclose(np.sort(s1), np.sort(s2), rtol=0, atol=1e-10 * scale)
    a0 = POLS.lookup(Manifold.EXCITED, 5, wl).si()[0]
    assert np.isclose(s1.sum(), -11 * a0 * np.sum(np.abs(E) ** 2), rtol=1e-9, atol=1e-12 * scale)


@given(amps, amps, amps, amps, amps, amps)
def test_conjugate_field_mirrors_ground_spectrum(a, b, c, d, e, f):
    E = _field(a, b, c, d, e, f)
    assume(np.linalg.norm(E) > 1e3)
    s = level_shifts(VectorFieldSample(E, 849.1e-9), Manifold.GROUND, 4, POLS)
    m = level_shifts(VectorFieldSample(E.conj(), 849.1e-9), Manifold.GROUND, 4, POLS)
    tol = 1e-12 * np.abs(s).max()
    assert np.allclose(np.sort(s), np.sort(m), rtol=1e-12, atol=tol)
    B = (-1j * np.cross(E, E.conj())).real
    # with B normal to the axis the m labelling is a tie, so only the set is fixed
    if abs(B[0]) > 1e-6 * np.linalg.norm(B):
        assert np.allclose(s, m[::-1], rtol=1e-12, atol=tol)


@given(st.floats(1e-9, 1e-5), st.floats(1e-9, 1e-5))
def test_casimir_polder_attractive_and_monotone(z1, z2):
    u1, u2 = casimir_polder(np.array([z1, z2]), CPParams())
    assert u1 < 0 and u2 < 0
    if z1 < z2:
        assert u1 <= u2


@given(st.integers(0, 5), st.integers(0, 3), st.data())
def test_clebsch_gordan_completeness(j1, j2, data):
    J = data.draw(st.integers(abs(j1 - j2), j1 + j2))
    M = data.draw(st.integers(-J, J))
    total = sum(clebsch_gordan_squared(j1, M - m2, j2, m2, J, M) for m2 in range(-j2, j2 + 1) if abs(M - m2) <= j1)
    assert total == Fraction(1)


@given(st.floats(20, 400), st.floats(5, 300), st.floats(0.3e-6, 0.8e-6))
@settings(max_examples=25)
def test_trap_finder_harmonic_recovery(fx_khz, fz_khz, z0):
    w = TWO_PI * np.array([fx_khz, fx_khz / 3, fz_khz]) * 1e3

    def u(r):
        r = np.asarray(r, float)
        return 0.5 * M_CS * (w[0] ** 2 * r[..., 0] ** 2 + w[1] ** 2 * r[..., 1] ** 2 + w[2] ** 2 * (r[..., 2] - z0) ** 2)

    (site,) = find_trap_sites(u, z_range=(0.1e-6, 1.0e-6))
    assert abs(site.z / z0 - 1) < 1e-4
    assert np.allclose(site.omega, w, rtol=1e-4)


@given(st.floats(0.5, 20.0), st.floats(0.02, 1.0))
def test_noise_free_lifetime_is_exact(tau_ms, amp):
    t = np.linspace(0, 12e-3, 25)
    res = fit_lifetime(t, 1 + amp * np.exp(-t / (tau_ms * 1e-3)))
    assert abs(res.tau / (tau_ms * 1e-3) - 1) < 1e-6


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30, unique=True), st.data())
def test_spectrum_csv_round_trip(tmp_path_factory, det, data):
    det = np.sort(np.asarray(det)) * 1e6
    vals = np.asarray(data.draw(st.lists(st.floats(0, 3), min_size=det.size, max_size=det.size)))
    errs = np.asarray(data.draw(st.lists(st.floats(1e-4, 1), min_size=det.size, max_size=det.size)))
    path = tmp_path_factory.mktemp("s") / "s.csv"
    Spectrum(det, vals, errs).to_csv(path)
    back = Spectrum.from_csv(path)
    # MHz <-> Hz scaling costs at most one rounding step each way
    assert np.allclose(back.detuning, det, rtol=4e-16, atol=0)
    assert np.array_equal(back.values, vals) and np.array_equal(back.errors, errs)


@given(st.lists(st.floats(0, 1), min_size=3, max_size=50), st.floats(0.01, 0.5), st.floats(0.5, 0.99))
def test_interaction_time_bounds(gb, f1, f2):
    gb = np.asarray(gb)
    t = np.linspace(0, 1e-6, gb.size)
    s = CouplingSeries(t, gb, np.zeros((gb.size, 9)), np.zeros((gb.size, 9)), np.zeros((gb.size, 11)))
    a, b = interaction_time(s, f1), interaction_time(s, f2)
    assert 0 <= b <= a <= 1e-6 + 1e-18
