"""Bus-waveguide/microring coupled modes and single-photon transport through
the F=4 -> F'=5 Lambda systems of a cesium atom.

Rates and detunings are angular frequencies (rad/s).  Probe detuning
``delta`` is ``omega_probe - omega_atom``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial, sqrt

import numpy as np

from .constants import GAMMA_D2, LAMBDA_D2, C as C_LIGHT
from .fields import WGMFieldParams

TWO_PI = 2 * np.pi
F_GROUND = 4
F_EXCITED = 5
# |<F=4||er||F'=5>|^2 in units of |<J=1/2||er||J'=3/2>|^2
S_45 = Fraction(11, 18)


class CavityError(ValueError):
    pass


@dataclass(frozen=True)
class RingParams:
    kappa_e: float = TWO_PI * 2.3e9
    kappa_i: float = TWO_PI * 4.8e9
    delta_c: float = 0.0
    beta: float = 0.0
    xi: float = 0.0

    def __post_init__(self):
        if self.kappa_e < 0 or self.kappa_i < 0:
            raise CavityError("coupling and intrinsic loss rates must be non-negative")
        if self.kappa_e + self.kappa_i <= 0:
            raise CavityError("total loss rate must be positive")

    @property
    def kappa(self):
        return self.kappa_e + self.kappa_i

    def kappa_tilde(self, delta_c=None):
        dc = self.delta_c if delta_c is None else delta_c
        return self.kappa + 2j * np.asarray(dc)


def steady_state_amplitudes(p: RingParams, s_in, delta_c=None):
    """CW and CCW mode amplitudes ``(a, b)`` for bus input ``s_in``."""
    dc = p.delta_c if delta_c is None else np.asarray(delta_c)
    h = p.kappa / 2 + 1j * dc
    den = h**2 + p.beta**2
    a = 1j * np.sqrt(p.kappa_e) * h * s_in / den
    b = 1j * np.sqrt(p.kappa_e) * 1j * p.beta * np.exp(-1j * p.xi) * s_in / den
    return a, b


def bare_transmission(p: RingParams, delta_c=None):
    """``T0 = |1 - 2 kappa_e / kappa_tilde|^2``."""
    return np.abs(1 - 2 * p.kappa_e / p.kappa_tilde(delta_c)) ** 2


def coupling_rate_from_mode_volume(v_m, wavelength=LAMBDA_D2, omega=None, gamma=GAMMA_D2):
    """``g = sqrt(3 lambda^3 omega gamma / (16 pi^2 V_m))``."""
    v_m = np.asarray(v_m, dtype=float)
    if np.any(v_m <= 0):
        raise CavityError("mode volume must be positive")
    omega = TWO_PI * C_LIGHT / wavelength if omega is None else omega
    return np.sqrt(3 * wavelength**3 * omega * gamma / (16 * np.pi**2 * v_m))


def mode_volume_from_coupling_rate(g, wavelength=LAMBDA_D2, omega=None, gamma=GAMMA_D2):
    omega = TWO_PI * C_LIGHT / wavelength if omega is None else omega
    return 3 * wavelength**3 * omega * gamma / (16 * np.pi**2 * np.asarray(g, float) ** 2)


@dataclass(frozen=True)
class CouplingMap:
    """Position-dependent single-atom coupling ``g(r)`` to the CW probe mode.

    ``g`` follows the probe field amplitude, ``|E(r)| / |E(r_ref)|``, and is
    pinned to ``g_ref`` at ``r_ref``; the implied mode volume follows from
    :func:`mode_volume_from_coupling_rate`.  ``g`` does not depend on ``y``.
    """

    probe: WGMFieldParams = field(default_factory=lambda: WGMFieldParams(wavelength=LAMBDA_D2))
    g_ref: float = TWO_PI * 37e6
    r_ref: tuple = (0.0, 0.0, 252.6e-9)

    def __post_init__(self):
        if self.g_ref < 0:
            raise CavityError("reference coupling rate must be non-negative")
        if self.r_ref[2] < 0:
            raise CavityError("reference point must lie above the waveguide")

    def g(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r[..., 2] < 0):
            raise CavityError("coupling map is defined for z >= 0 only")
        ref = np.asarray(self.r_ref, float)
        ratio = np.sqrt(self.probe.envelope2(r) / self.probe.envelope2(ref))
        return self.g_ref * ratio

    def gbar(self, r):
        """Unpolarized rate ``sqrt(<(eta_plus g)^2>)`` over equal populations."""
        return self.g(r) * np.sqrt(ETA2_MEAN)

    def mode_volume(self, r):
        return mode_volume_from_coupling_rate(self.g(r), self.probe.wavelength)


def _racah_parts(j1, m1, j2, m2, J, M):
    """Rational ``(prefactor, sum)`` with ``CG = sqrt(prefactor) * sum``."""
    if m1 + m2 != M or not (abs(j1 - j2) <= J <= j1 + j2):
        return Fraction(0), Fraction(0)
    if abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return Fraction(0), Fraction(0)
    pref = Fraction(
        (2 * J + 1) * factorial(J + j1 - j2) * factorial(J - j1 + j2) * factorial(j1 + j2 - J),
        factorial(j1 + j2 + J + 1),
    )
    pref *= (factorial(J + M) * factorial(J - M) * factorial(j1 - m1) * factorial(j1 + m1)
             * factorial(j2 - m2) * factorial(j2 + m2))
    total = Fraction(0)
    for k in range(0, j1 + j2 - J + 1):
        d = [k, j1 + j2 - J - k, j1 - m1 - k, j2 + m2 - k, J - j2 + m1 + k, J - j1 - m2 + k]
        if min(d) < 0:
            continue
        den = 1
        for x in d:
            den *= factorial(x)
        total += Fraction((-1) ** k, den)
    return pref, total


def clebsch_gordan(j1, m1, j2, m2, J, M):
    """``<j1 m1; j2 m2 | J M>`` for integer arguments (Racah formula)."""
    pref, total = _racah_parts(j1, m1, j2, m2, J, M)
    return sqrt(pref) * float(total)


def clebsch_gordan_squared(j1, m1, j2, m2, J, M) -> Fraction:
    """Exact ``|<j1 m1; j2 m2 | J M>|^2``."""
    pref, total = _racah_parts(j1, m1, j2, m2, J, M)
    return pref * total * total


def eta_coefficients(l, F=F_GROUND):
    """``(eta_plus_l, eta_minus_l)`` for ``|F=4, l> -> |F'=5, l +- 1>``.

    ``eta = sqrt(2) C`` with ``C^2 = S_45 |<F'=5, l+-1; 1, -+1 | F=4, l>|^2``, so
    the stretched cycling transition has ``eta_plus_4 = 1``.
    """
    if F != F_GROUND:
        raise CavityError("only the F=4 -> F'=5 manifold is tabulated")
    if not isinstance(l, (int, np.integer)) or abs(l) > F:
        raise CavityError(f"magnetic quantum number must be an integer with |l| <= {F}")
    # one rounding step from the exact square keeps eta_plus_4 == 1.0 exactly
    return tuple(sqrt(float(eta_squared_exact(l, q))) for q in (+1, -1))


def eta_tables(F=F_GROUND):
    """Arrays ``eta_plus[l + F]`` and ``eta_minus[l + F]`` for ``l = -F..F``."""
    ep = np.array([eta_coefficients(l, F)[0] for l in range(-F, F + 1)])
    em = np.array([eta_coefficients(l, F)[1] for l in range(-F, F + 1)])
    return ep, em


def eta_squared_exact(l, sign=+1) -> Fraction:
    """Exact ``(eta_plus_l)^2`` (``sign=+1``) or ``(eta_minus_l)^2`` (``sign=-1``)."""
    if abs(l) > F_GROUND or sign not in (1, -1):
        raise CavityError("need |l| <= 4 and sign = +1 or -1")
    mp = l + sign
    if abs(mp) > F_EXCITED:
        return Fraction(0)
    return 2 * S_45 * clebsch_gordan_squared(F_EXCITED, mp, 1, -sign, F_GROUND, l)


def cooperativity_ratio_exact() -> Fraction:
    num = sum(eta_squared_exact(l + 2, -1) for l in range(-F_GROUND, F_GROUND - 1))
    return num / sum(eta_squared_exact(l, +1) for l in range(-F_GROUND, F_GROUND + 1))


ETA_PLUS, ETA_MINUS = eta_tables()
# unpolarized average of eta_plus^2; gbar = g sqrt(ETA2_MEAN)
ETA2_MEAN = float(np.mean(ETA_PLUS**2))


def cooperativity_ratio():
    """``<C-> / <C+>`` for equal sublevel populations and no level shifts."""
    num = sum(ETA_MINUS[l + 2 + F_GROUND] ** 2 for l in range(-F_GROUND, F_GROUND - 1))
    return num / float(np.sum(ETA_PLUS**2))


@dataclass(frozen=True)
class AtomCouplingConfig:
    """Atom parameters entering the Lambda-level transport.

    ``omega_g[l + 4]`` and ``omega_e[m + 5]`` are level shifts (rad/s) of the
    ground and excited sublevels.  ``populations`` are the ``alpha_l^2``.
    """

    g: float
    populations: np.ndarray = field(default_factory=lambda: np.full(9, 1 / 9))
    omega_g: np.ndarray = field(default_factory=lambda: np.zeros(9))
    omega_e: np.ndarray = field(default_factory=lambda: np.zeros(11))
    gamma: float = GAMMA_D2

    def __post_init__(self):
        pops = np.asarray(self.populations, float)
        if pops.shape != (9,) or np.any(pops < 0) or abs(pops.sum() - 1) > 1e-9:
            raise CavityError("populations must be 9 non-negative numbers summing to 1")
        if self.gamma <= 0:
            raise CavityError("atomic linewidth must be positive")
        if np.asarray(self.omega_g).shape != (9,) or np.asarray(self.omega_e).shape != (11,):
            raise CavityError("level shifts must have 9 ground and 11 excited entries")

    @classmethod
    def stretched(cls, g, gamma=GAMMA_D2):
        pops = np.zeros(9)
        pops[-1] = 1.0
        return cls(g, pops, gamma=gamma)

    def splitting(self, l):
        og = np.asarray(self.omega_g)
        return og[l + 2 + 4] - og[l + 4] if l + 2 <= 4 else 0.0


@dataclass(frozen=True)
class LambdaCoefficients:
    t: complex
    r: complex
    c_plus: complex
    c_minus: complex


def _lambda_core(kt, kappa_e, g, l, delta, gamma, og, oe):
    """Vectorized ``t_l, r_l, C+, C-``; ``g, delta, og, oe`` broadcast together."""
    ep = ETA_PLUS[l + 4]
    em = ETA_MINUS[l + 2 + 4] if l + 2 <= 4 else 0.0
    gt = gamma + 2j * (oe[..., l + 1 + 5] - og[..., l + 4] - delta)
    cp = 4 * (ep * g) ** 2 / (kt * gt)
    if em != 0.0:
        dl = og[..., l + 2 + 4] - og[..., l + 4]
        cm = 4 * (em * g) ** 2 / ((kt + 1j * dl / 2) * gt)
        r = (2 * kappa_e / kt) * (ep / em) * cm / (1 + cp + cm)
    else:
        cm = np.zeros_like(cp)
        r = np.zeros_like(cp)
    t = 1 - (2 * kappa_e / kt) * (1 + cm) / (1 + cp + cm)
    return t, r, cp, cm


def lambda_transmission(l, delta, config: AtomCouplingConfig, p: RingParams) -> LambdaCoefficients:
    """Transmission/reflection of the ``l``-th Lambda system at probe detuning ``delta``."""
    if not -4 <= l <= 4:
        raise CavityError("Lambda index must satisfy |l| <= 4")
    t, r, cp, cm = _lambda_core(
        p.kappa_tilde(), p.kappa_e, config.g, l, delta, config.gamma,
        np.asarray(config.omega_g, float), np.asarray(config.omega_e, float),
    )
    return LambdaCoefficients(complex(t), complex(r), complex(cp), complex(cm))


def total_transmission(delta, config: AtomCouplingConfig, p: RingParams):
    """``sum_l alpha_l^2 |t_l|^2`` (vectorized over ``delta``)."""
    delta = np.asarray(delta, float)
    kt = p.kappa_tilde()
    og = np.asarray(config.omega_g, float)
    oe = np.asarray(config.omega_e, float)
    out = np.zeros(delta.shape)
    for l in range(-4, 5):
        w = config.populations[l + 4]
        if w == 0:
            continue
        t, *_ = _lambda_core(kt, p.kappa_e, config.g, l, delta, config.gamma, og, oe)
        out = out + w * np.abs(t) ** 2
    return out


def unpolarized_transmission_series(delta, g, omega_g, omega_e, p: RingParams, gamma=GAMMA_D2, populations=None):
    """Equal-population transmission for many samples.

    ``g`` has shape ``(n,)`` and the level shifts ``(n, 9)`` / ``(n, 11)``;
    ``delta`` has shape ``(k,)``.  Returns ``(k, n)``.
    """
    delta = np.asarray(delta, float)[:, None]
    g = np.asarray(g, float)[None, :]
    og = np.asarray(omega_g, float)[None, :, :]
    oe = np.asarray(omega_e, float)[None, :, :]
    pops = np.full(9, 1 / 9) if populations is None else np.asarray(populations)
    kt = p.kappa_tilde()
    out = np.zeros(np.broadcast_shapes(delta.shape, g.shape))
    for l in range(-4, 5):
        t, *_ = _lambda_core(kt, p.kappa_e, g, l, delta, gamma, og, oe)
        out += pops[l + 4] * np.abs(t) ** 2
    return out


def polarized_transmission(delta, g, p: RingParams, gamma=GAMMA_D2):
    """Stretched-state transmission ``|1 - 2 kappa_e / (kappa_tilde (1 + C))|^2``.

    ``delta`` is the probe detuning, so ``gamma_tilde = gamma - 2 i delta``.
    """
    kt = p.kappa_tilde()
    gt = gamma - 2j * np.asarray(delta, float)
    c = 4 * np.asarray(g, float) ** 2 / (kt * gt)
    return np.abs(1 - 2 * p.kappa_e / (kt * (1 + c))) ** 2


def transmission_from_cooperativities(delta, c_plus, c_minus, p: RingParams, gamma=GAMMA_D2):
    """``|t|^2`` for an effective Lambda system with on-resonance cooperativities.

    ``C+-`` are referred to the bare cavity line, ``C~ = C kappa gamma / (kappa_tilde gamma_tilde)``.
    """
    kt = p.kappa_tilde()
    gt = gamma - 2j * np.asarray(delta, float)
    cp = c_plus * p.kappa * gamma / (kt * gt)
    cm = c_minus * p.kappa * gamma / (kt * gt)
    return np.abs(1 - (2 * p.kappa_e / kt) * (1 + cm) / (1 + cp + cm)) ** 2


def peak_width(delta, curve, baseline):
    """Full width at half maximum of ``curve - baseline`` (linear interpolation)."""
    delta = np.asarray(delta, float)
    y = np.asarray(curve, float) - baseline
    i = int(np.argmax(y))
    half = y[i] / 2
    left = np.where(y[:i] < half)[0]
    right = np.where(y[i:] < half)[0]
    if left.size == 0 or right.size == 0:
        return float("nan")
    a = left[-1]
    b = right[0] + i
    xl = np.interp(half, [y[a], y[a + 1]], [delta[a], delta[a + 1]])
    xr = np.interp(half, [y[b], y[b - 1]], [delta[b], delta[b - 1]])
    return float(xr - xl)
