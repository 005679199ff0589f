"""Transmission observables built from simulated atoms, and their fits.

Detunings in the public API are probe detunings from the bare atomic line in
Hz (``delta_nu``); models convert to rad/s internally.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares, minimize, minimize_scalar
from sklearn.base import BaseEstimator, RegressorMixin

from .cavityqed import (
    CouplingMap,
    RingParams,
    bare_transmission,
    polarized_transmission,
    unpolarized_transmission_series,
)
from .constants import GAMMA_D2, KB, M_CS

TWO_PI = 2 * np.pi
GH_ORDER = 7
DEFAULT_WINDOW = 1e-3
# samples with gbar below this fraction of the coupling-map reference are taken as uncoupled
COUPLING_FLOOR = 1e-2


class FitError(RuntimeError):
    pass


@dataclass
class Spectrum:
    detuning: np.ndarray  # Hz
    values: np.ndarray  # T/T0
    errors: np.ndarray

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, float)
        self.values = np.asarray(self.values, float)
        self.errors = np.asarray(self.errors, float)
        if not (self.detuning.shape == self.values.shape == self.errors.shape):
            raise ValueError("detunings, values and errors must have equal length")
        if np.any(self.errors <= 0):
            raise ValueError("standard errors must be positive")
        if np.any(np.diff(self.detuning) <= 0):
            raise ValueError("detunings must be strictly increasing")

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta_nu_mhz", "t_over_t0", "error"])
            for d, v, e in zip(self.detuning, self.values, self.errors):
                w.writerow([repr(float(d) / 1e6), repr(float(v)), repr(float(e))])

    @classmethod
    def from_csv(cls, path):
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, 0] * 1e6, rows[:, 1], rows[:, 2])


def synthetic_noise(values, rng, relative=None, counts=None):
    """Gaussian photon-counting noise on a ``T/T0`` curve.

    With ``counts`` photons per point at ``T/T0 = 1`` the standard error is
    ``sqrt(y / counts)``; ``relative`` is shorthand for ``counts = relative**-2``.
    Returns ``(noisy_values, errors)``.
    """
    if (relative is None) == (counts is None):
        raise ValueError("give exactly one of relative or counts")
    n0 = counts if counts is not None else relative**-2.0
    y = np.asarray(values, float)
    err = np.sqrt(np.clip(y, 1e-12, None) / n0)
    return y + rng.standard_normal(y.shape) * err, err


# --- guided atoms ---------------------------------------------------------

def _transit_excess(series, delta, ring: RingParams, polarized, floor):
    """``int (T(delta, g(t)) - T0) dt`` for one passage, shape ``delta.shape``."""
    t = series.t
    if t.size < 2:
        return np.zeros(delta.shape)
    w = np.zeros(t.size)
    dt = np.diff(t)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    keep = series.gbar > floor
    if not keep.any():
        return np.zeros(delta.shape)
    t0 = bare_transmission(ring)
    if polarized:
        shift = series.omega_e[keep, -1] - series.omega_g[keep, -1]
        T = polarized_transmission(delta[:, None] - shift[None, :], series.g[keep][None, :], ring)
    else:
        T = unpolarized_transmission_series(
            delta, series.g_l[keep, -1], series.omega_g[keep], series.omega_e[keep], ring
        )
    return (T - t0) @ w[keep]


@dataclass
class GuidedModel:
    """Precomputed ensemble response for :func:`guided_spectrum_model`.

    ``response`` is ``<int (T - T0) dt> / T0`` (seconds) per detuning, so the
    model is linear in the flux.
    """

    detuning: np.ndarray
    response: np.ndarray
    window: float = DEFAULT_WINDOW

    def __call__(self, flux):
        return 1.0 + flux * self.response


def guided_response(series_list, detuning, ring: RingParams = RingParams(), window=DEFAULT_WINDOW,
                    polarized=False, floor=None) -> GuidedModel:
    """Ensemble-averaged transit response on a detuning grid (Hz)."""
    series_list = list(series_list)
    if not series_list:
        raise ValueError("ensemble of coupling series is empty")
    if window <= 0:
        raise ValueError("probe window must be positive")
    delta = TWO_PI * np.asarray(detuning, float)
    if floor is None:
        floor = COUPLING_FLOOR * max(s.peak for s in series_list)
    acc = np.zeros(delta.shape)
    for s in series_list:
        acc += _transit_excess(s, delta, ring, polarized, floor)
    t0 = bare_transmission(ring)
    # 1 + N T_w [<int T dt> / int T0 dt - 1] with every passage inside the window
    excess = acc / len(series_list)
    response = window * ((t0 * window + excess) / (t0 * window) - 1.0)
    return GuidedModel(np.asarray(detuning, float), response, window)


def guided_spectrum_model(flux, series_list, detuning, ring: RingParams = RingParams(),
                          window=DEFAULT_WINDOW, polarized=False):
    """``T/T0`` for an atom flux ``flux`` (atoms/s) through the near field."""
    if flux < 0:
        raise ValueError("flux must be non-negative")
    return guided_response(series_list, detuning, ring, window, polarized)(flux)


@dataclass
class GuidedFitResult:
    flux: float  # atoms/s
    stderr: float
    chi2: float
    dof: int
    effective_number: float | None = None
    linear_flux: float = float("nan")
    polarized: "GuidedFitResult | None" = None

    def as_record(self):
        rec = {
            "flux_per_ms": self.flux * 1e-3,
            "flux_stderr_per_ms": self.stderr * 1e-3,
            "chi2": self.chi2,
            "dof": self.dof,
            "effective_atom_number": self.effective_number,
        }
        if self.polarized is not None:
            rec["polarized"] = self.polarized.as_record()
        return rec


def _fit_linear_model(spectrum: Spectrum, model: GuidedModel, tol=1e-10):
    y = spectrum.values - 1.0
    w = spectrum.errors**-2.0
    R = model.response
    curv = float(np.sum(w * R * R))
    if curv <= 0 or not np.isfinite(curv):
        raise FitError("model response is flat; flux is undetermined")

    def chi2(n):
        return float(np.sum(w * (y - n * R) ** 2))

    raw = float(np.sum(w * y * R)) / curv
    closed = max(0.0, raw)
    scale = 1.0 / np.sqrt(curv)
    # chi^2 is a parabola in the flux, so +-10 standard errors always bracket its minimum
    res = minimize_scalar(chi2, bracket=(raw - 10 * scale, raw, raw + 10 * scale), method="golden", tol=tol)
    flux = max(0.0, float(res.x))
    if closed > 0 and abs(flux - closed) > 1e-6 * max(closed, scale):
        raise FitError(f"golden-section flux {flux} disagrees with the linear solution {closed}")
    return GuidedFitResult(flux, scale, chi2(flux), len(y) - 1, linear_flux=closed)


def fit_flux(spectrum: Spectrum, series_list, ring: RingParams = RingParams(), interaction_time=None,
             window=DEFAULT_WINDOW, with_polarized=True) -> GuidedFitResult:
    """Weighted least-squares fit of the flux, the only free parameter.

    The standard error follows from the curvature of chi^2.  When
    ``with_polarized`` is set the stretched-state model is fitted as well.
    """
    series_list = list(series_list)
    model = guided_response(series_list, spectrum.detuning, ring, window)
    out = _fit_linear_model(spectrum, model)
    if interaction_time is not None:
        out.effective_number = effective_atom_number(out.flux, interaction_time)
    if with_polarized:
        pol = guided_response(series_list, spectrum.detuning, ring, window, polarized=True)
        out.polarized = _fit_linear_model(spectrum, pol)
    return out


def effective_atom_number(flux, interaction_time):
    """``flux * t_i`` with flux in atoms/s and ``t_i`` in s."""
    if flux < 0 or interaction_time < 0:
        raise ValueError("flux and interaction time must be non-negative")
    return float(flux * interaction_time)


# --- trapped atoms --------------------------------------------------------

def _gauss_hermite(order=GH_ORDER):
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / w.sum()


def thermal_coupling(z_t, T_t, trap, g_map: CouplingMap, order=GH_ORDER):
    """Quadrature nodes, weights and ``g`` for a thermal atom at ``(0, z_t)``."""
    wx, wz = trap
    if wx <= 0 or wz <= 0:
        raise ValueError("trap frequencies must be positive")
    if T_t < 0 or z_t <= 0:
        raise ValueError("trap temperature must be >= 0 and position > 0")
    v = np.sqrt(KB * T_t / M_CS)
    x, w = _gauss_hermite(order)
    X, Z = np.meshgrid(x * v / wx, z_t + x * v / wz, indexing="ij")
    W = np.outer(w, w)
    r = np.stack([X, np.zeros_like(X), np.clip(Z, 0.0, None)], axis=-1)
    return W, g_map.g(r)


def coupling_moments(z_t, T_t, trap, g_map: CouplingMap):
    """Mean and standard deviation of ``g`` over the thermal distribution."""
    W, g = thermal_coupling(z_t, T_t, trap, g_map)
    mean = float(np.sum(W * g))
    return mean, float(np.sqrt(np.sum(W * (g - mean) ** 2)))


def trapped_spectrum_model(p, z_t, T_t, trap, g_map: CouplingMap, detuning, ring: RingParams = RingParams(),
                           gamma=GAMMA_D2):
    """``1 + p [<T_pol(g(x, z))> / T0 - 1]`` on a detuning grid (Hz)."""
    W, g = thermal_coupling(z_t, T_t, trap, g_map)
    delta = TWO_PI * np.asarray(detuning, float)
    T = polarized_transmission(delta[:, None], g.ravel()[None, :], ring, gamma) @ W.ravel()
    return 1.0 + p * (T / bare_transmission(ring) - 1.0)


@dataclass
class TrapFitResult:
    p: float
    z_t: float
    T_t: float
    covariance: np.ndarray
    chi2: float
    dof: int
    peak: float
    g_mean: float
    g_std: float
    ellipse: np.ndarray = field(repr=False, default_factory=lambda: np.empty((0, 2)))
    converged: bool = True
    message: str = ""
    profile: object = field(default=None, repr=False, compare=False)

    @property
    def errors(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def as_record(self):
        e = self.errors
        return {
            "p": self.p, "p_err": e[0],
            "z_t_nm": self.z_t * 1e9, "z_t_err_nm": e[1] * 1e9,
            "T_t_uK": self.T_t * 1e6, "T_t_err_uK": e[2] * 1e6,
            "chi2": self.chi2, "dof": self.dof, "peak_t_over_t0": self.peak,
            "g_mhz": self.g_mean / TWO_PI / 1e6, "sigma_g_mhz": self.g_std / TWO_PI / 1e6,
            "converged": self.converged,
            "confidence_95_p_z_nm": [[float(a), float(b * 1e9)] for a, b in self.ellipse],
        }


# parameters are optimized in (p, z_t [nm], T_t [uK]) to keep the simplex well scaled
_SCALE = np.array([1.0, 1e-9, 1e-6])
TRAP_BOUNDS = ((0.0, 1.0), (50.0, 600.0), (0.5, 2000.0))
CHI2_95_2D = 5.991464547107979


def _hessian(f, x, h):
    n = len(x)
    H = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h[i]
            ej[j] = h[j]
            if i == j:
                H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
            else:
                H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (
                    4 * h[i] * h[j]
                )
    return H


def confidence_ellipse(mean, cov, level=CHI2_95_2D, n=72):
    """Polyline of the ``level`` contour of a 2-D Gaussian."""
    w, V = np.linalg.eigh(cov)
    a = np.linspace(0, TWO_PI, n)
    circle = np.stack([np.cos(a), np.sin(a)], axis=1) * np.sqrt(np.clip(w, 0, None) * level)
    return np.asarray(mean) + circle @ V.T


def fit_trap(spectrum: Spectrum, trap, g_map: CouplingMap, ring: RingParams = RingParams(), start=None,
             tol=1e-10) -> TrapFitResult:
    """Minimum-chi^2 fit of ``(p, z_t, T_t)`` with a Hessian covariance."""
    y = spectrum.values
    w = spectrum.errors**-2.0

    def chi2(q):
        p, z, T = q * _SCALE
        m = trapped_spectrum_model(p, z, T, trap, g_map, spectrum.detuning, ring)
        return float(np.sum(w * (y - m) ** 2))

    starts = [np.asarray(start, float) / _SCALE] if start is not None else [
        np.array([0.1, z, T]) for z in (180.0, 240.0, 300.0) for T in (50.0, 200.0)
    ]
    best = None
    for s0 in starts:
        res = minimize(chi2, s0, method="Nelder-Mead", bounds=TRAP_BOUNDS,
                       options={"xatol": 1e-9, "fatol": tol, "maxiter": 20000, "maxfev": 40000})
        if best is None or res.fun < best.fun:
            best = res
    # polish from the best vertex
    best = minimize(chi2, best.x, method="Nelder-Mead", bounds=TRAP_BOUNDS,
                    options={"xatol": 1e-10, "fatol": tol, "maxiter": 20000, "maxfev": 40000})
    q = best.x
    t_lo, t_hi = TRAP_BOUNDS[2]
    t_grid = np.geomspace(t_lo, t_hi, 25)

    def profile(p, z):
        """``min_T chi^2`` at fixed ``(p, z_t)`` in SI units."""
        f = lambda t: chi2(np.array([p, z / _SCALE[1], t]))
        vals = [f(t) for t in t_grid]
        k = int(np.argmin(vals))
        lo, hi = t_grid[max(k - 1, 0)], t_grid[min(k + 1, t_grid.size - 1)]
        return min(vals[k], minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                            options={"xatol": 1e-3}).fun)

    H = _hessian(chi2, q, np.array([1e-4, 1e-2, 1e-1]) * np.maximum(1.0, np.abs(q) / np.array([1.0, 100.0, 100.0])))
    try:
        cov_q = 2.0 * np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov_q = np.full((3, 3), np.nan)
    cov = cov_q * np.outer(_SCALE, _SCALE)
    p, z, T = q * _SCALE
    dense = np.linspace(spectrum.detuning.min(), spectrum.detuning.max(), 2001)
    peak = float(trapped_spectrum_model(p, z, T, trap, g_map, dense, ring).max())
    g_mean, g_std = coupling_moments(z, max(T, 0.0), trap, g_map)
    ellipse = confidence_ellipse((p, z), cov[:2, :2]) if np.all(np.isfinite(cov[:2, :2])) else np.empty((0, 2))
    return TrapFitResult(
        float(p), float(z), float(T), cov, float(best.fun), len(y) - 3, peak, g_mean, g_std,
        ellipse, bool(best.success), str(best.message), profile,
    )


def in_confidence_region(result: TrapFitResult, p, z_t, level=CHI2_95_2D, method="profile"):
    """Whether ``(p, z_t)`` lies inside the joint confidence region.

    ``"profile"`` tests ``min_T chi^2(p, z_t, T) - chi^2_min <= level``; the
    ``T_t`` direction is strongly curved, so this keeps nominal coverage where
    the Hessian ellipse (``"ellipse"``) undercovers.
    """
    if method == "profile" and result.profile is not None:
        return bool(result.profile(p, z_t) - result.chi2 <= level)
    if method not in ("profile", "ellipse"):
        raise ValueError(f"unknown method {method!r}")
    d = np.array([p - result.p, z_t - result.z_t])
    cov = result.covariance[:2, :2]
    return bool(d @ np.linalg.solve(cov, d) <= level)


# --- lifetime -------------------------------------------------------------

@dataclass
class LifetimeResult:
    tau: float
    error: float
    amplitude: float
    no_decay: bool = False
    flagged: str = ""


def fit_lifetime(hold_times, values, errors=None, no_decay_factor=1e3) -> LifetimeResult:
    """Least-squares fit of ``1 + A exp(-t/tau)`` to ``T/T0`` versus hold time."""
    t = np.asarray(hold_times, float)
    y = np.asarray(values, float)
    if t.size < 2 or t.size != y.size:
        raise ValueError("need at least two hold times with matching values")
    s = np.ones_like(y) if errors is None else np.asarray(errors, float)
    span = float(t.max() - t.min())
    d = y - 1.0
    if np.allclose(d, d[0], rtol=0, atol=1e-12 * max(1.0, abs(d[0]))):
        return LifetimeResult(float("inf"), float("inf"), float(d[0]), True, "no decay")
    if t.size == 2:
        if d[0] * d[1] <= 0:
            return LifetimeResult(float("nan"), float("nan"), float("nan"), False, "non-positive tau")
        tau = (t[1] - t[0]) / np.log(d[0] / d[1])
        amp = d[0] * np.exp(t[0] / tau)
        return LifetimeResult(float(tau), 0.0, float(amp), False, "" if tau > 0 else "non-positive tau")
    pos = d > 0
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(t[pos], np.log(d[pos]), 1)
        tau0 = -1.0 / slope if slope < 0 else 10 * span
        a0 = np.exp(icpt)
    else:
        tau0, a0 = span, float(d.max())
    # fit the decay rate so that tau -> infinity stays reachable
    res = least_squares(lambda q: (q[0] * np.exp(-t * q[1]) - d) / s, [a0, 1.0 / tau0],
                        x_scale=[abs(a0) or 1.0, 1.0 / tau0], xtol=1e-14, ftol=1e-14, gtol=1e-14)
    amp, rate = res.x
    J = res.jac
    dof = max(1, t.size - 2)
    scale = 1.0 if errors is not None else float(np.sum(res.fun**2) / dof)
    try:
        cov = np.linalg.inv(J.T @ J) * scale
        rate_err = float(np.sqrt(cov[1, 1]))
    except np.linalg.LinAlgError:
        rate_err = float("inf")
    if rate <= 0:
        return LifetimeResult(float("inf") if rate == 0 else float(1 / rate), float("inf"), float(amp),
                              rate == 0, "non-positive tau")
    tau = 1.0 / rate
    err = rate_err / rate**2
    if tau > no_decay_factor * max(span, 1e-300):
        return LifetimeResult(float(tau), float(err), float(amp), True, "no decay")
    return LifetimeResult(float(tau), float(err), float(amp))


# --- estimator wrappers ---------------------------------------------------

class FluxFitter(RegressorMixin, BaseEstimator):
    """Estimator form of :func:`fit_flux`; ``X`` holds detunings in Hz."""

    def __init__(self, series=None, ring=None, window=DEFAULT_WINDOW, polarized=False):
        self.series = series
        self.ring = ring
        self.window = window
        self.polarized = polarized

    def _model(self, X):
        ring = self.ring if self.ring is not None else RingParams()
        return guided_response(self.series, np.ravel(X), ring, self.window, self.polarized)

    def fit(self, X, y, sigma=None):
        det = np.ravel(np.asarray(X, float))
        y = np.asarray(y, float)
        err = np.ones_like(y) if sigma is None else np.asarray(sigma, float)
        result = _fit_linear_model(Spectrum(det, y, err), self._model(det))
        self.flux_ = result.flux
        self.flux_stderr_ = result.stderr
        self.chi2_ = result.chi2
        return self

    def predict(self, X):
        return self._model(X)(self.flux_)


class TrapSpectrumFitter(RegressorMixin, BaseEstimator):
    """Estimator form of :func:`fit_trap`."""

    def __init__(self, trap=(TWO_PI * 190e3, TWO_PI * 550e3), g_map=None, ring=None):
        self.trap = trap
        self.g_map = g_map
        self.ring = ring

    def _parts(self):
        return (self.g_map if self.g_map is not None else CouplingMap(),
                self.ring if self.ring is not None else RingParams())

    def fit(self, X, y, sigma=None):
        g_map, ring = self._parts()
        y = np.asarray(y, float)
        err = np.ones_like(y) if sigma is None else np.asarray(sigma, float)
        self.result_ = fit_trap(Spectrum(np.ravel(X), y, err), self.trap, g_map, ring)
        self.p_, self.z_t_, self.T_t_ = self.result_.p, self.result_.z_t, self.result_.T_t
        return self

    def predict(self, X):
        g_map, ring = self._parts()
        return trapped_spectrum_model(self.p_, self.z_t_, self.T_t_, self.trap, g_map, np.ravel(X), ring)


class LifetimeFitter(RegressorMixin, BaseEstimator):
    """Estimator form of :func:`fit_lifetime`; ``X`` holds hold times in s."""

    def fit(self, X, y, sigma=None):
        self.result_ = fit_lifetime(np.ravel(X), y, sigma)
        self.tau_ = self.result_.tau
        self.amplitude_ = self.result_.amplitude
        return self

    def predict(self, X):
        return 1.0 + self.amplitude_ * np.exp(-np.ravel(np.asarray(X, float)) / self.tau_)
