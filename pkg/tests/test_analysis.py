import numpy as np
import pytest
from sklearn.base import clone

from atomfunnel.analysis import (
    FitError,
    FluxFitter,
    LifetimeFitter,
    Spectrum,
    TrapSpectrumFitter,
    confidence_ellipse,
    coupling_moments,
    effective_atom_number,
    fit_flux,
    fit_lifetime,
    fit_trap,
    guided_response,
    guided_spectrum_model,
    in_confidence_region,
    synthetic_noise,
    thermal_coupling,
    trapped_spectrum_model,
)
from atomfunnel.cavityqed import CouplingMap, RingParams, bare_transmission, unpolarized_transmission_series
from atomfunnel.constants import KB, M_CS
from atomfunnel.trajectory import CouplingSeries, coupling_series

TWO_PI = 2 * np.pi
RING = RingParams()
TRAP = (TWO_PI * 190e3, TWO_PI * 550e3)
GMAP = CouplingMap()


def _passage(z_turn=140e-9, v=0.15, n=400):
    """Straight-line bounce: down to ``z_turn`` and back at speed ``v``."""
    t = np.linspace(0, 2 * 300e-9 / v, n)
    z = z_turn + np.abs(300e-9 - v * t)
    r = np.column_stack([np.zeros(n), np.zeros(n), z])
    return coupling_series((t, r), GMAP)


@pytest.fixture(scope="module")
def passages():
    return [_passage(z) for z in (110e-9, 140e-9, 170e-9)]


def test_spectrum_validation_and_csv(tmp_path):
    s = Spectrum([-1e6, 0.0, 2e6], [1.0, 1.2, 1.01], [0.01, 0.02, 0.01])
    path = tmp_path / "s.csv"
    s.to_csv(path)
    back = Spectrum.from_csv(path)
    assert np.allclose(back.detuning, s.detuning)
    assert np.allclose(back.values, s.values)
    with pytest.raises(ValueError):
        Spectrum([0, 0], [1, 1], [1, 1])
    with pytest.raises(ValueError):
        Spectrum([0, 1], [1, 1], [1, 0])


def test_synthetic_noise_scale(rng):
    y = np.full(200000, 1.2)
    noisy, err = synthetic_noise(y, rng, relative=0.02)
    assert np.allclose(err, 0.02 * np.sqrt(1.2))
    assert np.std(noisy - y) == pytest.approx(0.02 * np.sqrt(1.2), rel=0.01)
    with pytest.raises(ValueError):
        synthetic_noise(y, rng)


def test_guided_response_by_direct_quadrature(passages):
    det = np.array([-10e6, 0.0, 5e6])
    model = guided_response(passages, det, RING, window=1e-3)
    t0 = bare_transmission(RING)
    expect = np.zeros(3)
    for s in passages:
        T = unpolarized_transmission_series(TWO_PI * det, s.g, s.omega_g, s.omega_e, RING)
        keep = s.gbar > 1e-2 * max(p.peak for p in passages)
        integrand = np.where(keep[None, :], T - t0, 0.0)
        expect += np.trapezoid(integrand, s.t, axis=1)
    expect /= len(passages) * t0
    assert np.allclose(model.response, expect, rtol=1e-10)
    assert np.allclose(guided_spectrum_model(2e5, passages, det, RING), 1 + 2e5 * expect)


def test_flux_round_trip(passages, rng):
    det = np.linspace(-60e6, 60e6, 121)
    truth = 1.6e5
    y, err = synthetic_noise(guided_spectrum_model(truth, passages, det), rng, relative=0.002)
    res = fit_flux(Spectrum(det, y, err), passages, interaction_time=2e-6)
    assert res.flux == pytest.approx(truth, rel=0.05)
    assert res.flux == pytest.approx(res.linear_flux, rel=1e-6)
    assert res.effective_number == pytest.approx(res.flux * 2e-6)
    assert res.polarized is not None and res.polarized.flux > 0
    assert res.chi2 / res.dof < 2


def test_flux_fit_rejects_flat_model():
    s = CouplingSeries(np.array([0.0, 1e-6]), np.zeros(2), np.zeros((2, 9)), np.zeros((2, 9)), np.zeros((2, 11)))
    det = np.linspace(-1e6, 1e6, 5)
    with pytest.raises(FitError):
        fit_flux(Spectrum(det, np.ones(5), np.ones(5)), [s], with_polarized=False)
    with pytest.raises(ValueError):
        effective_atom_number(-1, 1)


def test_thermal_mean_coupling_closed_form():
    z_t, T = 222e-9, 113e-6
    mean, std = coupling_moments(z_t, T, TRAP, GMAP)
    sx = np.sqrt(KB * T / M_CS) / TRAP[0]
    sz = np.sqrt(KB * T / M_CS) / TRAP[1]
    d = GMAP.probe.kappa_inv
    hw = GMAP.probe.halfwidth_x
    g0 = GMAP.g(np.array([0, 0, z_t]))
    # Gaussian averages of exp(-z/d) and exp(-x^2/hw^2)
    assert mean == pytest.approx(g0 * np.exp(sz**2 / (2 * d**2)) / np.sqrt(1 + 2 * sx**2 / hw**2), rel=1e-6)
    second = g0**2 * np.exp(2 * sz**2 / d**2) / np.sqrt(1 + 4 * sx**2 / hw**2)
    assert std == pytest.approx(np.sqrt(second - mean**2), rel=1e-4)
    W, g = thermal_coupling(z_t, 0.0, TRAP, GMAP)
    assert np.allclose(g, g0)
    with pytest.raises(ValueError):
        thermal_coupling(z_t, -1.0, TRAP, GMAP)


def test_trapped_model_limits():
    det = np.linspace(-30e6, 30e6, 7)
    assert np.allclose(trapped_spectrum_model(0.0, 222e-9, 1e-4, TRAP, GMAP, det), 1.0)
    y = trapped_spectrum_model(0.1, 222e-9, 113e-6, TRAP, GMAP, np.array([0.0]))
    assert 1.05 < y[0] < 1.2


def test_trap_fit_round_trip(rng):
    det = np.linspace(-30e6, 30e6, 61)
    clean = trapped_spectrum_model(0.1, 222e-9, 113e-6, TRAP, GMAP, det)
    y, err = synthetic_noise(clean, rng, relative=0.0005)
    res = fit_trap(Spectrum(det, y, err), TRAP, GMAP)
    assert res.converged
    assert abs(res.p - 0.1) < 0.03
    assert abs(res.z_t - 222e-9) < 16e-9
    assert abs(res.T_t - 113e-6) < 51e-6
    assert res.ellipse.shape == (72, 2)
    rec = res.as_record()
    assert set(rec) >= {"p", "z_t_nm", "T_t_uK", "chi2", "peak_t_over_t0"}


def test_confidence_ellipse_geometry():
    cov = np.array([[4.0, 0.0], [0.0, 1.0]])
    pts = confidence_ellipse((1.0, 2.0), cov, level=1.0, n=400)
    d = pts - np.array([1.0, 2.0])
    assert np.allclose((d[:, 0] ** 2) / 4 + d[:, 1] ** 2, 1.0)


@pytest.mark.slow
def test_trap_confidence_region_coverage():
    det = np.linspace(-30e6, 30e6, 61)
    clean = trapped_spectrum_model(0.1, 222e-9, 113e-6, TRAP, GMAP, det)
    rng = np.random.default_rng(77)
    hits = 0
    n = 200
    for _ in range(n):
        y, err = synthetic_noise(clean, rng, relative=0.0005)
        res = fit_trap(Spectrum(det, y, err), TRAP, GMAP)
        hits += in_confidence_region(res, 0.1, 222e-9)
    assert 0.90 <= hits / n <= 0.99


def test_lifetime_exact_and_degenerate_cases():
    t = np.linspace(0, 12e-3, 25)
    y = 1 + 0.15 * np.exp(-t / 4e-3)
    res = fit_lifetime(t, y)
    assert res.tau == pytest.approx(4e-3, rel=1e-8)
    assert res.amplitude == pytest.approx(0.15, rel=1e-8)
    two = fit_lifetime(t[[0, 10]], y[[0, 10]])
    assert two.tau == pytest.approx(4e-3, rel=1e-12)
    flat = fit_lifetime(t, np.full(t.size, 1.1))
    assert flat.no_decay and np.isinf(flat.tau)
    rising = fit_lifetime(t, 1 + 0.15 * np.exp(t / 4e-3))
    assert rising.flagged == "non-positive tau"
    with pytest.raises(ValueError):
        fit_lifetime(t[:1], y[:1])


def test_lifetime_replicate_accuracy():
    rng = np.random.default_rng(5)
    t = np.linspace(0, 12e-3, 25)
    taus = []
    for _ in range(100):
        y = 1 + 0.15 * np.exp(-t / 4e-3) + rng.normal(0, 0.015, t.size)
        taus.append(fit_lifetime(t, y, np.full(t.size, 0.015)).tau)
    taus = np.array(taus)
    assert np.sqrt(np.mean((taus - 4e-3) ** 2)) < 0.6e-3
    assert abs(np.mean(taus) / 4e-3 - 1) < 0.05


def test_estimators_follow_sklearn_conventions(passages, rng):
    t = np.linspace(0, 12e-3, 25)
    y = 1 + 0.15 * np.exp(-t / 4e-3)
    est = LifetimeFitter().fit(t[:, None], y)
    assert est.tau_ == pytest.approx(4e-3, rel=1e-8)
    assert est.score(t[:, None], y) == pytest.approx(1.0)
    assert isinstance(clone(est), LifetimeFitter)

    det = np.linspace(-40e6, 40e6, 41)
    yf = guided_spectrum_model(1e5, passages, det)
    ff = FluxFitter(series=passages).fit(det[:, None], yf)
    assert ff.flux_ == pytest.approx(1e5, rel=1e-6)
    assert np.allclose(ff.predict(det[:, None]), yf)
    assert clone(ff).get_params()["window"] == ff.window

    tf = TrapSpectrumFitter(trap=TRAP, g_map=GMAP)
    d2 = np.linspace(-30e6, 30e6, 31)
    y2 = trapped_spectrum_model(0.12, 230e-9, 80e-6, TRAP, GMAP, d2)
    tf.fit(d2[:, None], y2, sigma=np.full(d2.size, 1e-4))
    assert tf.p_ == pytest.approx(0.12, abs=1e-3)
    assert tf.z_t_ == pytest.approx(230e-9, abs=1e-9)
