"""Acceptance checks for the calibrated defaults.

Each check returns a :class:`CheckResult`; :func:`run_checks` evaluates them
in order and shares the expensive trajectory ensembles between them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from . import config as C
from .analysis import (
    Spectrum,
    coupling_moments,
    fit_flux,
    fit_lifetime,
    fit_trap,
    guided_response,
    synthetic_noise,
    trapped_spectrum_model,
)
from .cavityqed import (
    ETA_MINUS,
    ETA_PLUS,
    F_EXCITED,
    F_GROUND,
    S_45,
    RingParams,
    bare_transmission,
    cooperativity_ratio_exact,
    eta_squared_exact,
    peak_width,
    transmission_from_cooperativities,
)
from .constants import AU_POLARIZABILITY, H, M_CS, joule_to_mhz, uk_to_joule
from .fields import VectorFieldSample
from .landscape import PotentialLandscape, find_trap_sites
from .lightshift import CPParams, HyperfineState, Manifold, casimir_polder, default_polarizabilities, level_shifts
from .trajectory import (
    CloudSample,
    IntegratorConfig,
    ballistic_entries,
    coupling_statistics,
    ensemble_coupling,
    integrate,
    near_field_statistics,
    oscillation_analysis,
    round_trip_time,
    axial_harmonic_frequency,
    run_ensemble,
    sample_cloud,
)

TWO_PI = 2 * np.pi


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)
    parts: dict = field(default_factory=dict)

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.detail}"


def cg_by_diagonalization(j1, m1, j2, m2, J, M):
    """Clebsch-Gordan coefficient from the ``J^2`` eigenvectors of the product space.

    Independent of any closed-form formula; the phase follows the
    Condon-Shortley rule ``<j1 j1; j2 (J - j1) | J J> > 0``.
    """
    if m1 + m2 != M:
        return 0.0

    def ops(j):
        m = np.arange(j, -j - 1, -1, dtype=float)
        jp = np.diag(np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1)), 1)
        return (jp + jp.T) / 2, (jp - jp.T) / 2j, np.diag(m)

    a, b = ops(j1), ops(j2)
    i1, i2 = np.eye(2 * j1 + 1), np.eye(2 * j2 + 1)
    Jt = [np.kron(a[k], i2) + np.kron(i1, b[k]) for k in range(3)]
    J2 = sum(x @ x for x in Jt).real
    m_tot = np.diag(Jt[2]).real
    # subspace with total projection M
    idx = np.where(np.isclose(m_tot, M))[0]
    w, V = np.linalg.eigh(J2[np.ix_(idx, idx)])
    k = int(np.argmin(np.abs(w - J * (J + 1))))
    vec = V[:, k]
    # fix the phase on the stretched state |J, J>, then lower to M
    idx_top = np.where(np.isclose(m_tot, J))[0]
    wt, Vt = np.linalg.eigh(J2[np.ix_(idx_top, idx_top)])
    top = np.zeros(len(m_tot))
    top[idx_top] = Vt[:, int(np.argmin(np.abs(wt - J * (J + 1))))]
    basis_m1 = np.repeat(np.arange(j1, -j1 - 1, -1), 2 * j2 + 1)
    if top[np.where(np.isclose(m_tot, J) & (basis_m1 == j1))[0][0]] < 0:
        top = -top
    lower = Jt[0] - 1j * Jt[1]
    state = top.astype(complex)
    for mm in range(J, M, -1):
        state = lower @ state
        state /= np.sqrt(J * (J + 1) - mm * (mm - 1))
    full = np.zeros(len(m_tot), complex)
    full[idx] = vec
    if np.vdot(full, state).real < 0:
        vec = -vec
    pos = int(np.where((basis_m1[idx] == m1))[0][0])
    return float(vec[pos].real)


class Context:
    """Lazily built simulation products shared by the checks."""

    def __init__(self, cfg=None, workers=None):
        self.cfg = C.default_config() if cfg is None else cfg
        self.workers = workers if workers is not None else self.cfg["workers"]

    @cached_property
    def landscape(self) -> PotentialLandscape:
        return C.build_plugged_landscape(self.cfg)

    @cached_property
    def integrator(self) -> IntegratorConfig:
        return C.build_integrator(self.cfg)

    @cached_property
    def cloud(self) -> CloudSample:
        return sample_cloud(C.build_cloud(self.cfg))

    @cached_property
    def ensemble(self):
        return run_ensemble(self.cloud, self.landscape, self.integrator, workers=self.workers)

    @cached_property
    def ensemble_no_barrier(self):
        cfg = C.with_seed(self.cfg, self.cfg["seed"] + 1)
        cfg["cloud"]["count"] = max(1, self.cfg["cloud"]["count"] // 2)
        cloud = sample_cloud(C.build_cloud(cfg))
        return run_ensemble(cloud, self.landscape.without("barrier"), self.integrator, workers=self.workers)

    @cached_property
    def g_map(self):
        return C.build_coupling_map(self.cfg)

    @cached_property
    def ring(self):
        return C.build_ring(self.cfg)

    @cached_property
    def series(self):
        return ensemble_coupling(self.ensemble, self.g_map, self.landscape)

    @cached_property
    def series_no_barrier(self):
        land = self.landscape.without("barrier")
        return ensemble_coupling(self.ensemble_no_barrier, self.g_map, land)

    @cached_property
    def coupling(self):
        entered = [t for t in self.ensemble.trajectories if t.entered_near_field]
        return coupling_statistics(self.series, entered)

    @cached_property
    def coupling_no_barrier(self):
        return coupling_statistics(self.series_no_barrier)

    @cached_property
    def lattice_site(self):
        land = C.build_lattice_landscape(self.cfg)
        sites = find_trap_sites(land, HyperfineState.ground(4), z_range=(60e-9, 1.2e-6), n_grid=3000)
        return sites[0]

    @cached_property
    def spectrum_grid(self):
        sp = self.cfg["spectrum"]
        return np.linspace(sp["detuning_min_mhz"], sp["detuning_max_mhz"], sp["points"]) * 1e6


def _fmt(ok):
    return "ok" if ok else "out of range"


def check_bare_cavity(ctx):
    t0 = float(bare_transmission(RingParams(TWO_PI * 2.3e9, TWO_PI * 4.8e9)))
    ok = abs(t0 - 0.1240) <= 1e-4
    return CheckResult(1, "bare cavity T0", ok, f"T0 = {t0:.5f} (target 0.1240 +- 1e-4)", {"T0": t0})


def check_transparency(ctx):
    p = RingParams(TWO_PI * 2.3e9, TWO_PI * 4.8e9)
    ratio = float(transmission_from_cooperativities(0.0, 0.9, 0.45, p) / bare_transmission(p))
    ok = abs(ratio - 2.90) <= 0.02
    return CheckResult(2, "steady-state transparency", ok, f"T/T0 = {ratio:.4f} (target 2.90 +- 0.02)", {"ratio": ratio})


def check_clebsch_gordan(ctx):
    worst = 0.0
    for l in range(-F_GROUND, F_GROUND + 1):
        for sign, table in ((+1, ETA_PLUS), (-1, ETA_MINUS)):
            mp = l + sign
            oracle = 0.0
            if abs(mp) <= F_EXCITED:
                oracle = np.sqrt(2 * float(S_45)) * abs(cg_by_diagonalization(F_EXCITED, mp, 1, -sign, F_GROUND, l))
            worst = max(worst, abs(table[l + F_GROUND] - oracle))
    eta_m4 = eta_squared_exact(4, -1)
    ratio = cooperativity_ratio_exact()
    parts = {"oracle": worst <= 1e-12, "eta_minus_4": eta_m4 == Fraction(1, 45), "ratio": ratio == Fraction(28, 55)}
    ok = all(parts.values())
    return CheckResult(3, "Clebsch-Gordan factors", ok,
                       f"max |eta - oracle| = {worst:.1e}, eta-_4^2 = {eta_m4}, <C->/<C+> = {ratio}",
                       {"max_error": worst}, parts)


def check_purcell(ctx):
    p = RingParams(TWO_PI * 2.3e9, TWO_PI * 4.8e9)
    d = TWO_PI * np.linspace(-60e6, 60e6, 24001)
    T = transmission_from_cooperativities(d, 0.9, 0.45, p)
    fwhm = peak_width(d, T, bare_transmission(p)) / TWO_PI / 1e6
    ok = abs(fwhm - 12.0) <= 1.0
    return CheckResult(4, "Purcell broadening", ok, f"FWHM = {fwhm:.2f} MHz (target 12 +- 1)", {"fwhm_mhz": fwhm})


def check_casimir_polder(ctx):
    cp = CPParams()
    rng = np.random.default_rng(12345)
    z = rng.uniform(20e-9, 5e-6, 1_000_000)
    u = casimir_polder(z, cp)
    closed = -(267.0 * H * 1e-24) / (z**4 * (1 + 136e-9 / z))
    err = float(np.max(np.abs(u - closed) / np.abs(closed)))
    u100 = abs(float(casimir_polder(100e-9, cp))) / H / 1e6
    parts = {"closed_form": err <= 1e-13, "u100": abs(u100 - 1.13) <= 0.01}
    return CheckResult(5, "Casimir-Polder", all(parts.values()),
                       f"max rel. deviation {err:.1e}, |U(100 nm)|/h = {u100:.4f} MHz", {"u100_mhz": u100}, parts)


def check_light_shift_structure(ctx):
    pols = default_polarizabilities()
    amp = 1e5
    lin = VectorFieldSample(np.array([0, amp, 0], complex), 935.3e-9)
    s_lin = level_shifts(lin, Manifold.GROUND, 4, pols)
    # the vector part is odd in m, so a linear field must give an even spectrum
    vector_zero = bool(np.allclose(s_lin, s_lin[::-1], rtol=1e-13, atol=0))
    scalar = float(np.mean(s_lin) / (-3025.0 * AU_POLARIZABILITY * amp**2))
    sp = VectorFieldSample(np.array([0, amp, 1j * amp], complex) / np.sqrt(2), 849.1e-9)
    sm = VectorFieldSample(np.array([0, amp, -1j * amp], complex) / np.sqrt(2), 849.1e-9)
    mirror = True
    for man, F in ((Manifold.GROUND, 4), (Manifold.EXCITED, 5)):
        a = level_shifts(sp, man, F, pols)
        b = level_shifts(sm, man, F, pols)
        mirror &= bool(np.allclose(a, b[::-1], rtol=1e-12, atol=0))
    mhz = float(joule_to_mhz(uk_to_joule(1000.0)))
    parts = {
        "vector_zero": vector_zero,
        "scalar": abs(scalar - 1) <= 1e-12,
        "mirror": mirror,
        "normalization": abs(mhz / 20.8 - 1) <= 0.005,
    }
    return CheckResult(6, "light-shift structure", all(parts.values()),
                       f"linear field even in m: {vector_zero}, sigma+/- mirror: {mirror}, "
                       f"scalar ratio {scalar:.12f}, k_B x 1 mK / h = {mhz:.3f} MHz",
                       {"mhz_per_mk": mhz}, parts)


def check_integrator(ctx):
    land = ctx.landscape
    cfg = IntegratorConfig(duration=20e-3)
    tr = integrate((np.array([0.0, 0.0, 100e-6]), np.zeros(3)), land, cfg, state=HyperfineState.ground(0))
    drift = float(np.max(np.abs(tr.energy - tr.energy[0])) / abs(tr.energy[0]))
    free = PotentialLandscape(gravity=True)
    ff = integrate((np.array([0.0, 0.0, 250e-6]), np.zeros(3)), free, IntegratorConfig(duration=3.5e-3))
    dz = float((250e-6 - ff.r[-1, 2]) * 1e6)
    sub = CloudSample(ctx.cloud.positions[:12], ctx.cloud.velocities[:12], ctx.cloud.m_F[:12])
    short = IntegratorConfig(duration=6e-3)
    e1 = run_ensemble(sub, land, short, workers=1, chunk_size=4)
    e2 = run_ensemble(sub, land, short, workers=3, chunk_size=4)
    same = all(
        np.array_equal(a.r, b.r) and np.array_equal(a.v, b.v) and np.array_equal(a.fine_r, b.fine_r)
        for a, b in zip(e1.trajectories, e2.trajectories)
    )
    parts = {"drift": drift < 1e-6, "free_fall": abs(dz - 60.0) <= 0.1, "workers": same}
    return CheckResult(7, "trajectory integrator", all(parts.values()),
                       f"energy drift {drift:.1e}, free fall {dz:.3f} um, worker-invariant: {same}",
                       {"drift": drift, "free_fall_um": dz}, parts)


def guiding_numbers(ctx):
    stats = near_field_statistics(ctx.ensemble, time_bin=0.5e-3)
    centers = 0.5 * (stats.bin_edges[1:] + stats.bin_edges[:-1])
    # a few hundred arrivals: smooth over 2.5 ms so counting noise does not split peaks
    osc = oscillation_analysis(centers, stats.arrival_histogram, smooth=5)
    peaks = osc.peak_times
    first = float(peaks[0]) if peaks.size else float("nan")
    spacing = float(peaks[1] - peaks[0]) if peaks.size >= 2 else float("nan")
    w_ax = axial_harmonic_frequency(ctx.landscape)
    half_period = np.pi / w_ax
    bounce = round_trip_time(ctx.landscape, ctx.cfg["cloud"]["center_um"][2] * 1e-6)
    big = sample_cloud(C.build_cloud({**C.with_seed(ctx.cfg, ctx.cfg["seed"] + 2),
                                      "cloud": {**ctx.cfg["cloud"], "count": 2_000_000}}))
    off = np.isfinite(ballistic_entries(big, ctx.integrator)).mean()
    on = stats.entry_fraction
    return {
        "first_peak_s": first, "spacing_s": spacing, "harmonic_half_period_s": half_period,
        "bounce_time_s": bounce, "guided_fraction": stats.guided_fraction,
        "entry_fraction_on": on, "entry_fraction_off": float(off),
        "ratio": on / off if off > 0 else float("inf"),
    }


def check_guiding(ctx):
    v = guiding_numbers(ctx)
    parts = {
        "first_peak": abs(v["first_peak_s"] - 3.5e-3) <= 1e-3,
        "spacing": abs(v["spacing_s"] - 9e-3) <= 3e-3,
        "harmonic_oracle": abs(v["harmonic_half_period_s"] - v["spacing_s"]) <= 3e-3,
        "guided_fraction": 0.02 <= v["guided_fraction"] <= 0.12,
        "on_off_ratio": v["ratio"] >= 10,
    }
    detail = (
        f"first peak {v['first_peak_s'] * 1e3:.2f} ms, spacing {v['spacing_s'] * 1e3:.2f} ms "
        f"(harmonic half period {v['harmonic_half_period_s'] * 1e3:.2f} ms, bounce quadrature "
        f"{v['bounce_time_s'] * 1e3:.2f} ms), guided {100 * v['guided_fraction']:.1f} %, on/off {v['ratio']:.0f}"
    )
    return CheckResult(8, "guiding dynamics", all(parts.values()), detail, v, parts)


def check_coupling(ctx):
    cs, cn = ctx.coupling, ctx.coupling_no_barrier
    gbar = cs.mean_peak_gbar / TWO_PI / 1e6
    ti = cs.mean_interaction_time * 1e6
    ti0 = cn.mean_interaction_time * 1e6
    turn = float(np.mean(cs.turning_z) * 1e9)
    parts = {
        "peak_gbar": abs(gbar - 90) <= 30,
        "t_i_barrier": abs(ti - 3.5) <= 1.5,
        "t_i_no_barrier": ti0 <= 1.5,
        "turning_point": abs(turn - 110) <= 40,
    }
    return CheckResult(9, "coupling statistics", all(parts.values()),
                       f"peak gbar 2pi x {gbar:.1f} MHz, t_i {ti:.2f} us (no barrier {ti0:.2f} us), "
                       f"turning point {turn:.0f} nm",
                       {"gbar_mhz": gbar, "t_i_us": ti, "t_i_no_barrier_us": ti0, "turning_nm": turn}, parts)


def guided_round_trip(ctx, flux=161e3, relative=0.02, seed=None):
    det = ctx.spectrum_grid
    model = guided_response(ctx.series, det, ctx.ring, ctx.cfg["spectrum"]["probe_window_ms"] * 1e-3)
    rng = np.random.default_rng(ctx.cfg["seed"] if seed is None else seed)
    y, err = synthetic_noise(model(flux), rng, relative=relative)
    fit = fit_flux(Spectrum(det, y, err), ctx.series, ctx.ring, ctx.coupling.mean_interaction_time,
                   with_polarized=False)
    return model, fit


def check_guided_fit(ctx):
    _, fit = guided_round_trip(ctx)
    rel = abs(fit.flux - 161e3) / 161e3
    parts = {"flux": rel <= 0.05, "effective_number": abs(fit.effective_number - 0.56) <= 0.1}
    return CheckResult(10, "guided-spectrum fit", all(parts.values()),
                       f"flux {fit.flux * 1e-3:.1f} /ms ({100 * rel:.1f} % off), N t_i = {fit.effective_number:.3f}",
                       {"flux_per_ms": fit.flux * 1e-3, "effective_number": fit.effective_number}, parts)


def trap_round_trip(ctx, truth=(0.10, 222e-9, 113e-6), seed=None, relative=None):
    tf = ctx.cfg["trap_fit"]
    site = ctx.lattice_site
    trap = (site.omega_x, site.omega_z)
    det = np.linspace(tf["detuning_min_mhz"], tf["detuning_max_mhz"], tf["points"]) * 1e6
    clean = trapped_spectrum_model(*truth, trap, ctx.g_map, det, ctx.ring)
    rng = np.random.default_rng(ctx.cfg["seed"] if seed is None else seed)
    y, err = synthetic_noise(clean, rng, relative=tf["noise_relative"] if relative is None else relative)
    return trap, fit_trap(Spectrum(det, y, err), trap, ctx.g_map, ctx.ring)


def check_trap_fit(ctx):
    trap, fit = trap_round_trip(ctx)
    g_mean, g_std = coupling_moments(222e-9, 113e-6, trap, ctx.g_map)
    parts = {
        "p": abs(fit.p - 0.10) <= 0.03,
        "z_t": abs(fit.z_t - 222e-9) <= 16e-9,
        "T_t": abs(fit.T_t - 113e-6) <= 51e-6,
        "peak": abs(fit.peak - 1.15) <= 0.05,
        "g": abs(g_mean / TWO_PI / 1e6 - 47) <= 10,
        "sigma_g": abs(g_std / TWO_PI / 1e6 - 15) <= 5,
    }
    return CheckResult(11, "trapped-spectrum fit", all(parts.values()),
                       f"p {fit.p:.3f}, z_t {fit.z_t * 1e9:.1f} nm, T_t {fit.T_t * 1e6:.0f} uK, peak {fit.peak:.3f}, "
                       f"g 2pi x {g_mean / TWO_PI / 1e6:.1f} MHz, sigma_g 2pi x {g_std / TWO_PI / 1e6:.1f} MHz",
                       {"p": fit.p, "z_t_nm": fit.z_t * 1e9, "T_t_uK": fit.T_t * 1e6, "peak": fit.peak,
                        "g_mhz": g_mean / TWO_PI / 1e6, "sigma_g_mhz": g_std / TWO_PI / 1e6}, parts)


def lifetime_replicates(ctx, n=100, seed=None):
    lt = ctx.cfg["lifetime"]
    t = np.linspace(lt["hold_min_ms"], lt["hold_max_ms"], lt["points"]) * 1e-3
    tau, amp = lt["tau_ms"] * 1e-3, lt["amplitude"]
    sigma = lt["noise_relative"] * amp
    rng = np.random.default_rng(ctx.cfg["seed"] if seed is None else seed)
    taus = []
    for _ in range(n):
        y = 1 + amp * np.exp(-t / tau) + rng.standard_normal(t.size) * sigma
        taus.append(fit_lifetime(t, y, np.full(t.size, sigma)).tau)
    return tau, np.asarray(taus)


def check_lifetime(ctx):
    tau, taus = lifetime_replicates(ctx)
    rms = float(np.sqrt(np.mean((taus - tau) ** 2)))
    bias = float(np.mean(taus) / tau - 1)
    parts = {"rms": rms <= 0.6e-3, "bias": abs(bias) < 0.05}
    return CheckResult(12, "lifetime fit", all(parts.values()),
                       f"rms error {rms * 1e3:.3f} ms over {taus.size} replicates, mean bias {100 * bias:+.2f} %",
                       {"rms_ms": rms * 1e3, "bias": bias}, parts)


def check_trap_sites(ctx):
    w0 = TWO_PI * 123e3
    z0 = 400e-9

    def harmonic(r):
        r = np.asarray(r, float)
        return 0.5 * M_CS * w0**2 * ((r[..., 0]) ** 2 + (r[..., 1]) ** 2 * 0.25 + (r[..., 2] - z0) ** 2)

    s = find_trap_sites(harmonic, z_range=(100e-9, 700e-9))[0]
    rel = max(abs(s.omega_z / w0 - 1), abs(s.omega_x / w0 - 1), abs(s.omega_y / (w0 / 2) - 1), abs(s.z / z0 - 1))
    site = ctx.lattice_site
    wx, wy, wz = (w / TWO_PI for w in site.omega)
    parts = {
        "oracle": rel <= 1e-4,
        "z1": 220e-9 <= site.z <= 270e-9,
        "ordering": wz > wx > 5 * wy,
        "omega_y": abs(wy / 19e3 - 1) <= 0.5,
    }
    return CheckResult(13, "trap-site finder", all(parts.values()),
                       f"oracle rel. error {rel:.1e}, z1 = {site.z * 1e9:.1f} nm, "
                       f"omega/2pi = ({wx / 1e3:.0f}, {wy / 1e3:.1f}, {wz / 1e3:.0f}) kHz",
                       {"z1_nm": site.z * 1e9, "f_kHz": (wx / 1e3, wy / 1e3, wz / 1e3)}, parts)


CHECKS = (
    check_bare_cavity, check_transparency, check_clebsch_gordan, check_purcell, check_casimir_polder,
    check_light_shift_structure, check_integrator, check_guiding, check_coupling, check_guided_fit,
    check_trap_fit, check_lifetime, check_trap_sites,
)


def run_checks(ctx=None, only=None):
    ctx = Context() if ctx is None else ctx
    out = []
    for i, fn in enumerate(CHECKS, start=1):
        if only is None or i in only:
            out.append(fn(ctx))
    return out


__all__ = ["CHECKS", "CheckResult", "Context", "cg_by_diagonalization", "run_checks"]
