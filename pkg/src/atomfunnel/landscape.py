"""Composable potential landscapes and trap-site search."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .constants import G_GRAV, H, M_CS
from .fields import (
    X_HAT,
    BeamParams,
    FunnelProfile,
    WGMFieldParams,
    funnel_field,
    lattice_field,
    wgm_evanescent_field,
)
from .lightshift import (
    CPParams,
    HyperfineState,
    LightShiftError,
    Manifold,
    PolarizabilitySet,
    casimir_polder,
    default_polarizabilities,
    level_shifts,
)

CONTRIBUTIONS = ("funnel", "barrier", "lattice", "cp", "gravity")


@dataclass(frozen=True)
class LatticeParams:
    """Top beam and its partial reflection off the waveguide."""

    top: BeamParams
    reflectivity: float = 0.3
    reflection_phase: float = 0.92 * np.pi
    reflection_halfwidth: float | None = 0.35e-6


@dataclass(frozen=True)
class PotentialLandscape:
    """Sum of the optical, surface and gravitational potentials.

    A contribution is disabled by setting it to ``None`` (or ``gravity=False``);
    see :meth:`without`.
    """

    funnel: FunnelProfile | None = None
    barrier: WGMFieldParams | None = None
    lattice: LatticeParams | None = None
    cp: CPParams | None = None
    gravity: bool = False
    axis: tuple = tuple(X_HAT)
    polarizabilities: PolarizabilitySet = field(default_factory=default_polarizabilities, compare=False, repr=False)

    @property
    def contributions(self):
        on = {
            "funnel": self.funnel is not None,
            "barrier": self.barrier is not None,
            "lattice": self.lattice is not None,
            "cp": self.cp is not None,
            "gravity": bool(self.gravity),
        }
        return tuple(k for k in CONTRIBUTIONS if on[k])

    def without(self, *names):
        changes = {}
        for name in names:
            if name not in CONTRIBUTIONS:
                raise KeyError(f"unknown contribution {name!r}")
            changes[name] = False if name == "gravity" else None
        return replace(self, **changes)

    def field_samples(self, r):
        out = {}
        if self.funnel is not None:
            out["funnel"] = funnel_field(self.funnel, r)
        if self.barrier is not None:
            out["barrier"] = wgm_evanescent_field(self.barrier, r)
        if self.lattice is not None:
            lat = self.lattice
            out["lattice"] = lattice_field(
                lat.top, lat.reflectivity, r, lat.reflection_phase, lat.reflection_halfwidth
            )
        return out

    def light_shifts(self, r, manifold, F, only=None):
        """Summed adiabatic light shifts, shape ``r.shape[:-1] + (2F+1,)``."""
        r = np.asarray(r, dtype=float)
        total = np.zeros(r.shape[:-1] + (2 * F + 1,))
        for name, sample in self.field_samples(r).items():
            if only is not None and name not in only:
                continue
            total = total + level_shifts(sample, manifold, F, self.polarizabilities, self.axis)
        return total

    def level_potentials(self, r, manifold=Manifold.GROUND, F=4):
        """Total potential of every ``m`` sublevel of ``(manifold, F)``."""
        r = np.asarray(r, dtype=float)
        manifold = Manifold(manifold)
        U = self.light_shifts(r, manifold, F)
        extra = np.zeros(r.shape[:-1])
        if self.cp is not None and manifold is Manifold.GROUND:
            extra = extra + casimir_polder(r[..., 2], self.cp)
        if self.gravity:
            extra = extra + M_CS * G_GRAV * r[..., 2]
        return U + extra[..., None]

    def potential(self, r, state: HyperfineState):
        return self.level_potentials(r, state.manifold, state.F)[..., state.index]

    def gradient(self, r, state: HyperfineState, step=1e-10):
        """Central finite-difference gradient (J/m)."""
        r = np.asarray(r, dtype=float)
        g = np.empty(r.shape)
        for k in range(3):
            d = np.zeros(3)
            d[k] = step
            g[..., k] = (self.potential(r + d, state) - self.potential(r - d, state)) / (2 * step)
        return g


def total_potential(landscape: PotentialLandscape, r, state: HyperfineState):
    return landscape.potential(r, state)


def differential_shift(landscape: PotentialLandscape, ground: HyperfineState, excited: HyperfineState, r, only=None):
    """``(U_excited - U_ground) / h`` from light shifts only, in Hz."""
    if ground.manifold is not Manifold.GROUND or excited.manifold is not Manifold.EXCITED:
        raise LightShiftError("differential shift needs a ground and an excited state")
    ue = landscape.light_shifts(r, excited.manifold, excited.F, only)[..., excited.index]
    ug = landscape.light_shifts(r, ground.manifold, ground.F, only)[..., ground.index]
    return (ue - ug) / H


@dataclass(frozen=True)
class TrapSite:
    z: float
    energy: float
    depth: float
    omega: tuple  # (wx, wy, wz) rad/s, nan where the curvature is negative

    @property
    def omega_x(self):
        return self.omega[0]

    @property
    def omega_y(self):
        return self.omega[1]

    @property
    def omega_z(self):
        return self.omega[2]


def _curvature_frequency(f, r0, k, h, mass):
    d = np.zeros(3)
    d[k] = h
    c = (f(r0 + d) - 2 * f(r0) + f(r0 - d)) / h**2
    return float(np.sqrt(c / mass)) if c > 0 else float("nan")


def find_trap_sites(
    potential,
    state: HyperfineState | None = None,
    z_range=(25e-9, 5e-6),
    x=0.0,
    y=0.0,
    n_grid=4000,
    mass=M_CS,
    fd_step=2e-9,
):
    """Local minima of ``U(x, y, z)`` along ``z`` with depth and trap frequencies.

    ``potential`` is a :class:`PotentialLandscape` (evaluated for ``state``) or
    any callable mapping an ``(..., 3)`` array to energies.  The depth of a site
    is the lower of the two barriers met when walking away from it along ``z``
    (the first local maximum, or the end of the interval).
    """
    if isinstance(potential, PotentialLandscape):
        if state is None:
            raise LightShiftError("a hyperfine state is required to evaluate a landscape")
        land = potential

        def f(r):
            return land.potential(r, state)
    else:
        f = potential

    z = np.linspace(z_range[0], z_range[1], n_grid)
    pts = np.stack([np.full_like(z, x), np.full_like(z, y), z], axis=-1)
    u = np.asarray(f(pts), dtype=float)
    if not np.all(np.isfinite(u)):
        raise LightShiftError("potential is not finite on the search interval")
    interior = np.where((u[1:-1] < u[:-2]) & (u[1:-1] <= u[2:]))[0] + 1
    sites = []
    for i in interior:
        res = minimize_scalar(
            lambda zz: float(f(np.array([x, y, zz]))),
            bracket=(z[i - 1], z[i], z[i + 1]),
            method="brent",
            options={"xtol": 1e-12},
        )
        z0 = float(res.x) if z[i - 1] <= res.x <= z[i + 1] else float(z[i])
        u0 = float(f(np.array([x, y, z0])))
        j = i
        while j > 0 and u[j - 1] >= u[j]:
            j -= 1
        left = u[j]
        j = i
        while j < n_grid - 1 and u[j + 1] >= u[j]:
            j += 1
        right = u[j]
        r0 = np.array([x, y, z0])
        omega = tuple(_curvature_frequency(f, r0, k, fd_step, mass) for k in range(3))
        sites.append(TrapSite(z0, u0, float(min(left, right) - u0), omega))
    return sites
