"""Thermal cloud sampling and classical trajectories through a landscape.

Atoms move on the adiabatic ground-state potential of their own ``m_F``
sublevel.  Landscapes made of the analytic funnel, barrier, surface and
gravity terms run through a compiled velocity-Verlet kernel; anything else
(e.g. with the top lattice, or user potentials) uses a pure-Python loop with
the same step-size tiers.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _dynamics as dyn
from .cavityqed import ETA_PLUS, CouplingMap
from .constants import G_GRAV, HBAR, KB, M_CS
from .fields import funnel_field, gaussian_beam_field, wgm_evanescent_field
from .landscape import PotentialLandscape
from .lightshift import HyperfineState, Manifold, level_shifts


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class CloudParams:
    count: int = 4000
    temperature: float = 20e-6
    center: tuple = (0.0, 0.0, 250e-6)
    rms_radii: tuple = (10e-6, 10e-6, 10e-6)
    seed: int = 20240607
    F: int = 4

    def __post_init__(self):
        if self.count <= 0:
            raise TrajectoryError("atom count must be positive")
        if self.temperature <= 0:
            raise TrajectoryError("temperature must be positive")
        if len(self.center) != 3 or len(self.rms_radii) != 3:
            raise TrajectoryError("center and rms radii must be 3-vectors")
        if any(r < 0 for r in self.rms_radii):
            raise TrajectoryError("rms radii must be non-negative")


@dataclass
class CloudSample:
    positions: np.ndarray
    velocities: np.ndarray
    m_F: np.ndarray

    def __len__(self):
        return len(self.m_F)


def sample_cloud(p: CloudParams, mass=M_CS) -> CloudSample:
    """Gaussian positions, Maxwell-Boltzmann velocities and uniform ``m_F``."""
    rng = np.random.default_rng(np.random.SeedSequence(p.seed))
    pos = np.asarray(p.center) + rng.standard_normal((p.count, 3)) * np.asarray(p.rms_radii)
    vel = rng.standard_normal((p.count, 3)) * np.sqrt(KB * p.temperature / mass)
    m = rng.integers(-p.F, p.F + 1, size=p.count)
    return CloudSample(pos, vel, m)


@dataclass(frozen=True)
class IntegratorConfig:
    """Step sizes and bookkeeping for :func:`integrate`.

    ``dt_far`` applies above ``z_mid``, ``dt_mid`` between ``z_near`` and
    ``z_mid`` and ``dt_near`` below ``z_near``.
    """

    duration: float = 30e-3
    dt_far: float = 1e-6
    dt_mid: float = 50e-9
    dt_near: float = 1e-9
    z_mid: float = 60e-6
    z_near: float = 5e-6
    z_min: float = 20e-9
    record_dt: float = 100e-6
    fine_z: float = 1e-6
    fine_dt: float = 5e-9
    max_fine: int = 200_000
    max_events: int = 4096
    near_field_z: float = 0.3e-6
    near_field_x: float = 0.2e-6
    near_field_y: float = 1.5e-6
    method: str = "verlet"

    def __post_init__(self):
        for name in ("duration", "dt_far", "dt_mid", "dt_near", "record_dt", "fine_dt"):
            if getattr(self, name) <= 0:
                raise TrajectoryError(f"{name} must be positive")
        if self.z_min >= self.near_field_z:
            raise TrajectoryError("surface-loss plane must lie below the near-field threshold")
        if self.method != "verlet":
            raise TrajectoryError(f"unsupported integration method {self.method!r}")

    def scaled(self, factor):
        """Copy with every step size multiplied by ``factor``."""
        return IntegratorConfig(**{
            **asdict(self),
            "dt_far": self.dt_far * factor,
            "dt_mid": self.dt_mid * factor,
            "dt_near": self.dt_near * factor,
        })


@dataclass
class Trajectory:
    """Sampled path of one atom.

    ``t, r, v, energy`` are on the coarse record grid; ``fine_t, fine_r`` hold
    the dense near-surface samples used for coupling series.
    """

    t: np.ndarray
    r: np.ndarray
    v: np.ndarray
    energy: np.ndarray
    m_F: int
    loaded: bool = False
    entered_near_field: bool = False
    surface_lost: bool = False
    entries: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    turning_points: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    fine_t: np.ndarray = field(default_factory=lambda: np.empty(0))
    fine_r: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    fine_overflow: bool = False

    def near_field_passes(self, gap=None):
        """Split the fine samples into separate visits below ``fine_z``."""
        if self.fine_t.size == 0:
            return []
        dt = np.diff(self.fine_t)
        if gap is None:
            gap = 10 * np.median(dt) if dt.size else np.inf
        cuts = np.where(dt > gap)[0] + 1
        return [(tt, rr) for tt, rr in zip(np.split(self.fine_t, cuts), np.split(self.fine_r, cuts))]


def _kernel_parameters(landscape: PotentialLandscape, m, F=4):
    """Pack ``landscape`` for the compiled kernel, or ``None`` if unsupported."""
    if not isinstance(landscape, PotentialLandscape) or landscape.lattice is not None:
        return None
    prm = np.zeros(dyn.N_PARAMS)
    c_red = 0.0
    c_blue = 0.0
    pols = landscape.polarizabilities
    if landscape.funnel is not None:
        fp = landscape.funnel
        b = fp.beam
        if abs(b.axis[2] - 1) > 1e-12 or b.focus[0] != 0 or b.focus[1] != 0:
            return None
        prm[dyn.P_FUNNEL_ON] = 1
        prm[dyn.P_POWER] = b.power
        prm[dyn.P_WAIST] = b.waist
        prm[dyn.P_ZR] = b.rayleigh_range
        prm[dyn.P_FOCUS_Z] = b.focus[2]
        prm[dyn.P_WS] = fp.surface_halfwidth
        prm[dyn.P_WNF] = fp.near_field_halfwidth
        prm[dyn.P_LNF] = fp.near_field_length
        prm[dyn.P_ZC] = fp.crossover
        prm[dyn.P_NTAPER] = fp.taper_power
        prm[dyn.P_ETA] = fp.funnel_fraction
        ref = np.array([0.0, 0.0, 1e-6])
        shifts = level_shifts(funnel_field(fp, ref), Manifold.GROUND, F, pols, landscape.axis)
        c_red = float(shifts[m + F] / fp.intensity(ref))
    if landscape.barrier is not None:
        wp = landscape.barrier
        prm[dyn.P_BARRIER_ON] = 1
        prm[dyn.P_LB] = wp.kappa_inv
        prm[dyn.P_HX] = wp.halfwidth_x
        shifts = level_shifts(wgm_evanescent_field(wp, np.zeros(3)), Manifold.GROUND, F, pols, landscape.axis)
        c_blue = float(shifts[m + F])
    if landscape.cp is not None:
        prm[dyn.P_CP_ON] = 1
        prm[dyn.P_C4] = landscape.cp.c4
        prm[dyn.P_LBAR] = landscape.cp.lambda_bar
    if landscape.gravity:
        prm[dyn.P_GRAV_ON] = 1
        prm[dyn.P_MG] = M_CS * G_GRAV
    prm[dyn.P_MASS] = M_CS
    return prm, c_red, c_blue


def _build_trajectory(coarse, n_c, fine, n_f, events, n_e, lost, overflow, m):
    ev = events[:n_e]
    entries = ev[ev[:, 0] == dyn.EV_ENTRY][:, 1:].copy()
    turns = ev[ev[:, 0] == dyn.EV_TURN][:, 1:].copy()
    c = coarse[:n_c]
    return Trajectory(
        t=c[:, 0].copy(),
        r=c[:, 1:4].copy(),
        v=c[:, 4:7].copy(),
        energy=c[:, 7].copy(),
        m_F=int(m),
        entered_near_field=bool(len(entries)),
        surface_lost=bool(lost),
        entries=entries,
        turning_points=turns,
        fine_t=fine[:n_f, 0].copy(),
        fine_r=fine[:n_f, 1:4].copy(),
        fine_overflow=bool(overflow),
    )


def _buffers(cfg: IntegratorConfig):
    n_rec = int(np.ceil(cfg.duration / cfg.record_dt)) + 2
    return (
        np.zeros((n_rec, 8)),
        np.zeros((cfg.max_fine, 4)),
        np.zeros((cfg.max_events, 5)),
    )


def _run_compiled(r0, v0, packed, cfg, bufs):
    prm, c_red, c_blue = packed
    coarse, fine, events = bufs
    n_c, n_f, n_e, lost, overflow = dyn.run_atom(
        np.asarray(r0, float), np.asarray(v0, float), prm, c_red, c_blue,
        cfg.duration, np.array([cfg.dt_far, cfg.dt_mid, cfg.dt_near]),
        np.array([cfg.z_mid, cfg.z_near]), cfg.z_min,
        cfg.record_dt, coarse, cfg.fine_z, cfg.fine_dt, fine,
        np.array([cfg.near_field_z, cfg.near_field_x, cfg.near_field_y]), events,
    )
    return n_c, n_f, n_e, lost, overflow


def _run_python(r0, v0, landscape, state, cfg: IntegratorConfig, mass):
    """Reference velocity-Verlet loop for arbitrary landscapes."""
    coarse, fine, events = _buffers(cfg)
    r = np.array(r0, float)
    v = np.array(v0, float)

    def force(rr):
        return -np.asarray(landscape.gradient(rr, state), float)

    def energy(rr, vv):
        return float(landscape.potential(rr, state)) + 0.5 * mass * vv @ vv

    f = force(r)
    t = 0.0
    n_c = n_f = n_e = 0
    lost = False
    overflow = False
    next_rec = 0.0
    next_fine = 0.0
    box = np.array([cfg.near_field_z, cfg.near_field_x, cfg.near_field_y])

    def in_box(rr):
        return rr[2] < box[0] and abs(rr[0]) < box[1] and abs(rr[1]) < box[2]

    inside = in_box(r)
    while True:
        if t >= next_rec - 1e-15 and n_c < len(coarse):
            coarse[n_c] = (t, *r, *v, energy(r, v))
            n_c += 1
            next_rec = n_c * cfg.record_dt
        if t >= cfg.duration:
            break
        if r[2] < cfg.fine_z and t >= next_fine - 1e-15:
            if n_f < len(fine):
                fine[n_f] = (t, *r)
                n_f += 1
            else:
                overflow = True
            next_fine = t + cfg.fine_dt
        dt = cfg.dt_near if r[2] < cfg.z_near else cfg.dt_mid if r[2] < cfg.z_mid else cfg.dt_far
        if next_rec > t:
            dt = min(dt, next_rec - t)
        dt = min(dt, cfg.duration - t)
        vz_old = v[2]
        v = v + 0.5 * dt * f / mass
        r = r + dt * v
        t += dt
        if r[2] <= cfg.z_min:
            lost = True
            if n_e < len(events):
                events[n_e] = (dyn.EV_LOSS, t, *r)
                n_e += 1
            break
        f = force(r)
        v = v + 0.5 * dt * f / mass
        now = in_box(r)
        if now and not inside and n_e < len(events):
            events[n_e] = (dyn.EV_ENTRY, t, *r)
            n_e += 1
        inside = now
        if vz_old < 0 <= v[2] and r[2] < cfg.fine_z and n_e < len(events):
            events[n_e] = (dyn.EV_TURN, t, *r)
            n_e += 1
    return _build_trajectory(coarse, n_c, fine, n_f, events, n_e, lost, overflow, state.m)


def integrate(start, landscape, config: IntegratorConfig = IntegratorConfig(), state=None, mass=M_CS) -> Trajectory:
    """Integrate ``m r'' = -grad U`` from ``start = (r0, v0)``.

    ``state`` defaults to the ground ``|F=4, m_F=0>`` level.  ``landscape`` is
    a :class:`PotentialLandscape` or any object exposing
    ``potential(r, state)`` and ``gradient(r, state)``.
    """
    r0, v0 = (np.asarray(a, float) for a in start)
    if r0.shape != (3,) or v0.shape != (3,):
        raise TrajectoryError("start must be a pair of 3-vectors")
    if not (np.all(np.isfinite(r0)) and np.all(np.isfinite(v0))):
        raise TrajectoryError("start must be finite")
    if r0[2] <= config.z_min:
        raise TrajectoryError("start position must lie above the surface-loss plane")
    state = state if state is not None else HyperfineState.ground(0)
    packed = _kernel_parameters(landscape, state.m, state.F) if mass == M_CS else None
    if packed is None:
        return _run_python(r0, v0, landscape, state, config, mass)
    bufs = _buffers(config)
    n_c, n_f, n_e, lost, overflow = _run_compiled(r0, v0, packed, config, bufs)
    return _build_trajectory(bufs[0], n_c, bufs[1], n_f, bufs[2], n_e, lost, overflow, state.m)


def loaded_mask(cloud: CloudSample, landscape: PotentialLandscape, mass=M_CS):
    """Atoms whose transverse energy is negative in the funnel at their start height."""
    if landscape.funnel is None:
        return np.zeros(len(cloud), bool)
    pos = cloud.positions
    u = np.empty(len(cloud))
    fld = funnel_field(landscape.funnel, pos)
    shifts = level_shifts(fld, Manifold.GROUND, 4, landscape.polarizabilities, landscape.axis)
    u = shifts[np.arange(len(cloud)), cloud.m_F + 4]
    ekin = 0.5 * mass * np.sum(cloud.velocities[:, :2] ** 2, axis=1)
    return ekin + u < 0


def _chunk_worker(args):
    positions, velocities, m_values, landscape, cfg, index0 = args
    out = []
    bufs = _buffers(cfg)
    cache = {}
    for i, (r0, v0, m) in enumerate(zip(positions, velocities, m_values)):
        state = HyperfineState.ground(int(m))
        if r0[2] <= cfg.z_min:
            raise TrajectoryError(f"atom {index0 + i} starts below the surface-loss plane")
        if int(m) not in cache:
            cache[int(m)] = _kernel_parameters(landscape, int(m))
        packed = cache[int(m)]
        if packed is None:
            out.append(_run_python(r0, v0, landscape, state, cfg, M_CS))
            continue
        n_c, n_f, n_e, lost, overflow = _run_compiled(r0, v0, packed, cfg, bufs)
        out.append(_build_trajectory(bufs[0], n_c, bufs[1], n_f, bufs[2], n_e, lost, overflow, m))
    return out


@dataclass
class Ensemble:
    trajectories: list
    cloud: CloudSample
    config: IntegratorConfig

    @property
    def loaded(self):
        return np.array([tr.loaded for tr in self.trajectories])

    @property
    def entered(self):
        return np.array([tr.entered_near_field for tr in self.trajectories])


def run_ensemble(cloud: CloudSample, landscape, config: IntegratorConfig = IntegratorConfig(),
                 workers=1, chunk_size=64) -> Ensemble:
    """Integrate every atom of ``cloud``; output order and values do not depend on ``workers``."""
    n = len(cloud)
    chunks = [
        (cloud.positions[i:i + chunk_size], cloud.velocities[i:i + chunk_size],
         cloud.m_F[i:i + chunk_size], landscape, config, i)
        for i in range(0, n, chunk_size)
    ]
    if workers <= 1:
        results = [_chunk_worker(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chunk_worker, chunks))
    trajs = [tr for chunk in results for tr in chunk]
    if isinstance(landscape, PotentialLandscape):
        mask = loaded_mask(cloud, landscape)
        for tr, flag in zip(trajs, mask):
            tr.loaded = bool(flag)
    return Ensemble(trajs, cloud, config)


def ballistic_entries(cloud: CloudSample, config: IntegratorConfig, duration=None, g=G_GRAV):
    """Near-field entry times for free fall (funnel off), evaluated in closed form.

    Returns the entry time for each atom, ``nan`` where the parabola misses the
    near-field box before ``duration``.
    """
    duration = config.duration if duration is None else duration
    p = cloud.positions
    v = cloud.velocities
    dz = p[:, 2] - config.near_field_z
    # z(t) = z0 + vz t - g t^2 / 2 reaches near_field_z at the positive root
    t_hit = (v[:, 2] + np.sqrt(v[:, 2] ** 2 + 2 * g * np.maximum(dz, 0))) / g
    x = p[:, 0] + v[:, 0] * t_hit
    y = p[:, 1] + v[:, 1] * t_hit
    hit = (np.abs(x) < config.near_field_x) & (np.abs(y) < config.near_field_y) & (t_hit <= duration)
    return np.where(hit, t_hit, np.nan)


@dataclass
class NearFieldStatistics:
    arrival_times: np.ndarray
    bin_edges: np.ndarray
    arrival_histogram: np.ndarray
    z_edges: np.ndarray
    density: np.ndarray
    guided_fraction: float
    n_loaded: int
    n_entered: int
    entry_fraction: float


def near_field_statistics(ensemble, z_edges=None, time_bin=0.5e-3, first_entry_only=False) -> NearFieldStatistics:
    """Near-field arrival times, ``z``-vs-time density and the guided fraction.

    Arrivals are entries into the near-field box; ``guided_fraction`` is the
    fraction of funnel-loaded atoms that enter it at least once.
    """
    trajs = ensemble.trajectories if isinstance(ensemble, Ensemble) else list(ensemble)
    if not trajs:
        raise TrajectoryError("no trajectories")
    duration = max(float(tr.t[-1]) for tr in trajs if tr.t.size) if trajs else 0.0
    if isinstance(ensemble, Ensemble):
        duration = ensemble.config.duration
    times = []
    for tr in trajs:
        if tr.entries.size:
            times.extend(tr.entries[:1, 0] if first_entry_only else tr.entries[:, 0])
    times = np.sort(np.asarray(times, float))
    edges = np.arange(0.0, duration + time_bin / 2, time_bin)
    hist, _ = np.histogram(times, edges)
    if z_edges is None:
        z_edges = np.linspace(0.0, 300e-6, 61)
    t_grid = trajs[0].t
    density = np.zeros((len(z_edges) - 1, len(t_grid)))
    for tr in trajs:
        n = min(len(tr.t), len(t_grid))
        idx = np.searchsorted(z_edges, tr.r[:n, 2]) - 1
        ok = (idx >= 0) & (idx < len(z_edges) - 1)
        density[idx[ok], np.arange(n)[ok]] += 1
    loaded = np.array([tr.loaded for tr in trajs])
    entered = np.array([tr.entered_near_field for tr in trajs])
    n_loaded = int(loaded.sum())
    n_guided = int((loaded & entered).sum())
    return NearFieldStatistics(
        arrival_times=times,
        bin_edges=edges,
        arrival_histogram=hist,
        z_edges=np.asarray(z_edges),
        density=density,
        guided_fraction=n_guided / n_loaded if n_loaded else float("nan"),
        n_loaded=n_loaded,
        n_entered=int(entered.sum()),
        entry_fraction=float(entered.mean()),
    )


@dataclass
class OscillationResult:
    peak_times: np.ndarray
    period: float | None


def oscillation_analysis(bin_centers, counts, smooth=3, min_separation=None, prominence=0.1):
    """Peaks of an arrival histogram and their mean spacing.

    ``counts`` is smoothed with a ``smooth``-bin moving average; peaks lower
    than ``prominence`` times the highest one are discarded.
    """
    from scipy.signal import find_peaks

    t = np.asarray(bin_centers, float)
    c = np.asarray(counts, float)
    if t.size < 3:
        return OscillationResult(np.empty(0), None)
    if smooth > 1:
        kernel = np.ones(smooth) / smooth
        c = np.convolve(np.pad(c, smooth // 2, mode="edge"), kernel, mode="valid")[: t.size]
    dist = None
    if min_separation is not None:
        dist = max(1, int(round(min_separation / (t[1] - t[0]))))
    peaks, _ = find_peaks(c, distance=dist, prominence=prominence * c.max() if c.max() > 0 else None)
    pt = t[peaks]
    period = float(np.mean(np.diff(pt))) if pt.size >= 2 else None
    return OscillationResult(pt, period)


def axial_harmonic_frequency(landscape: PotentialLandscape, state=None, h=2e-6):
    """``sqrt(U''/m)`` of the far-field bottom beam on its axis at the focus."""
    state = state if state is not None else HyperfineState.ground(0)
    if landscape.funnel is None:
        raise TrajectoryError("axial frequency needs the bottom beam")
    beam = landscape.funnel.beam
    f = np.asarray(beam.focus, float)
    axis = np.asarray(beam.axis, float)
    pts = np.stack([f - h * axis, f, f + h * axis])
    u = level_shifts(gaussian_beam_field(beam, pts), Manifold.GROUND, state.F,
                     landscape.polarizabilities, landscape.axis)[:, state.index]
    c = (u[0] - 2 * u[1] + u[2]) / h**2
    return float(np.sqrt(c / M_CS)) if c > 0 else float("nan")


def round_trip_time(landscape: PotentialLandscape, z_start, state=None, z_floor=None, n=4000):
    """Time for an on-axis atom released at rest at ``z_start`` to return there.

    Quadrature of ``dt = dz / v(z)`` on the axis including gravity; the atom
    reflects at the lower classical turning point (or at ``z_floor``).
    """
    state = state if state is not None else HyperfineState.ground(0)
    z_floor = 1e-6 if z_floor is None else z_floor
    z = np.linspace(z_floor, z_start, n)
    pts = np.stack([np.zeros_like(z), np.zeros_like(z), z], -1)
    u = landscape.potential(pts, state)
    e = u[-1]
    ke = e - u
    ok = ke > 0
    if not ok.any():
        return float("nan")
    # lower turning point
    lo = np.where(~ok[:-1])[0]
    start = lo[-1] + 1 if lo.size else 0
    zz = z[start:]
    kk = np.clip(ke[start:], 0, None)
    v = np.sqrt(2 * kk / M_CS)
    # integrable 1/sqrt singularity at the release point: substitute u = sqrt(z_start - z)
    s = np.sqrt(z_start - zz)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(v > 0, 2 * s / v, 0.0)
    # at s -> 0, v ~ sqrt(2 F s^2 / m) so 2s/v is finite; extrapolate the last point
    integrand[-1] = integrand[-2]
    return float(2 * abs(np.trapezoid(integrand, s)))


@dataclass
class CouplingSeries:
    """Coupling and level shifts sampled along one near-field passage.

    ``g_l[:, l + 4] = eta_plus_l g``; ``omega_g`` and ``omega_e`` are the
    ground (``m = -4..4``) and excited (``m = -5..5``) level shifts in rad/s.
    """

    t: np.ndarray
    gbar: np.ndarray
    g_l: np.ndarray
    omega_g: np.ndarray
    omega_e: np.ndarray
    m_F: int = 0
    atom: int = -1

    @property
    def g(self):
        return self.g_l[:, -1]

    @property
    def peak(self):
        return float(self.gbar.max()) if self.gbar.size else 0.0


def coupling_series(trajectory, g_map: CouplingMap, landscape: PotentialLandscape | None = None, atom=-1,
                    shift_stride=8):
    """Sample ``gbar(r(t))`` and the level shifts along a trajectory.

    ``trajectory`` is a :class:`Trajectory` (its dense near-surface samples are
    used) or a ``(t, r)`` pair.  Without a landscape the level shifts are zero.
    Level shifts are evaluated on every ``shift_stride``-th sample and linearly
    interpolated in between.
    """
    if isinstance(trajectory, Trajectory):
        t, r, m = trajectory.fine_t, trajectory.fine_r, trajectory.m_F
    else:
        t, r = trajectory
        m = 0
    t = np.asarray(t, float)
    r = np.asarray(r, float).reshape(-1, 3)
    g = g_map.g(r) if len(t) else np.empty(0)
    g_l = g[:, None] * ETA_PLUS[None, :]
    gbar = np.sqrt(np.mean(g_l**2, axis=1))
    if landscape is not None and len(t):
        idx = np.unique(np.r_[np.arange(0, len(t), max(1, int(shift_stride))), len(t) - 1])
        og_s = landscape.light_shifts(r[idx], Manifold.GROUND, 4) / HBAR
        oe_s = landscape.light_shifts(r[idx], Manifold.EXCITED, 5) / HBAR
        if idx.size == len(t):
            og, oe = og_s, oe_s
        else:
            og = np.stack([np.interp(t, t[idx], c) for c in og_s.T], axis=1)
            oe = np.stack([np.interp(t, t[idx], c) for c in oe_s.T], axis=1)
    else:
        og = np.zeros((len(t), 9))
        oe = np.zeros((len(t), 11))
    return CouplingSeries(t, gbar, g_l, og, oe, int(m), atom)


def interaction_time(series: CouplingSeries, fraction=0.1):
    """Time during which ``gbar > fraction * max(gbar)``.

    Each sampling interval counts in proportion to how many of its two end
    points satisfy the condition.
    """
    gb = series.gbar
    if gb.size < 2 or gb.max() <= 0:
        return 0.0
    above = (gb > fraction * gb.max()).astype(float)
    return float(np.sum(np.diff(series.t) * 0.5 * (above[1:] + above[:-1])))


def ensemble_coupling(ensemble, g_map: CouplingMap, landscape: PotentialLandscape | None = None,
                      passes="all", box=None):
    """Coupling series of the near-field passages in the ensemble.

    Only passages that visit the near-field box ``(z, |x|, |y|)`` limits are
    kept; ``box`` defaults to the ensemble's integrator settings.  ``passes``
    is ``"all"`` or ``"first"`` (first qualifying passage per atom).
    """
    if isinstance(ensemble, Ensemble):
        trajs = ensemble.trajectories
        cfg = ensemble.config
    else:
        trajs = list(ensemble)
        cfg = IntegratorConfig()
    if box is None:
        box = (cfg.near_field_z, cfg.near_field_x, cfg.near_field_y)
    out = []
    for i, tr in enumerate(trajs):
        if not tr.entered_near_field:
            continue
        for tt, rr in tr.near_field_passes():
            inside = (rr[:, 2] < box[0]) & (np.abs(rr[:, 0]) < box[1]) & (np.abs(rr[:, 1]) < box[2])
            if tt.size < 2 or not inside.any():
                continue
            series = coupling_series((tt, rr), g_map, landscape, atom=i)
            series.m_F = tr.m_F
            out.append(series)
            if passes == "first":
                break
    return out


@dataclass
class CouplingStatistics:
    mean_peak_gbar: float
    mean_interaction_time: float
    peak_gbar: np.ndarray
    interaction_times: np.ndarray
    turning_z: np.ndarray


def coupling_statistics(series, trajectories=None, fraction=0.1, min_peak=0.0):
    """Ensemble means of the peak ``gbar`` and of the interaction time.

    Passages whose peak coupling is below ``min_peak`` are ignored.  Turning
    points are the lowest near-surface turning point of each trajectory.
    """
    series = [s for s in series if s.peak > min_peak]
    peaks = np.array([s.peak for s in series])
    ti = np.array([interaction_time(s, fraction) for s in series])
    turns = []
    for tr in trajectories or []:
        if tr.turning_points.size:
            turns.append(tr.turning_points[:, 3].min())
    return CouplingStatistics(
        float(peaks.mean()) if peaks.size else float("nan"),
        float(ti.mean()) if ti.size else float("nan"),
        peaks, ti, np.asarray(turns),
    )


def save_trajectories(path, trajectories, flags=True):
    """Columnar CSV dump: ``atom, t, x, y, z, vx, vy, vz, m_F, flags``."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("atom,t_s,x_m,y_m,z_m,vx_m_s,vy_m_s,vz_m_s,m_F,flags\n")
        for i, tr in enumerate(trajectories):
            code = int(tr.loaded) | int(tr.entered_near_field) << 1 | int(tr.surface_lost) << 2
            for k in range(len(tr.t)):
                r = tr.r[k]
                v = tr.v[k]
                fh.write(
                    f"{i},{tr.t[k]:.9e},{r[0]:.9e},{r[1]:.9e},{r[2]:.9e},"
                    f"{v[0]:.9e},{v[1]:.9e},{v[2]:.9e},{tr.m_F},{code}\n"
                )


def ensemble_summary(ensemble: Ensemble, stats: NearFieldStatistics, extra=None):
    record = {
        "n_atoms": len(ensemble.trajectories),
        "n_loaded": stats.n_loaded,
        "n_entered": stats.n_entered,
        "guided_fraction": stats.guided_fraction,
        "arrival_times_s": stats.arrival_times.tolist(),
    }
    if extra:
        record.update(extra)
    return record


def dump_json(path, record):
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True))
