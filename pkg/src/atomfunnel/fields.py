"""Electric-field models for the beams around the microring.

Geometry used everywhere: the straight racetrack section runs along ``y``,
``x`` is transverse to the waveguide in the chip plane and ``z`` points up
from the top surface of the waveguide (``z = 0``).  Fields are returned as
positive-frequency amplitudes ``E`` with ``I = 2 eps0 c |E|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .constants import intensity_to_field2

GRID_FORMAT_VERSION = "atomfunnel-grid-1"

X_HAT = np.array([1.0, 0.0, 0.0])
Y_HAT = np.array([0.0, 1.0, 0.0])
Z_HAT = np.array([0.0, 0.0, 1.0])


class FieldError(ValueError):
    pass


class GridFileError(FieldError):
    pass


def _as_points(r):
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != 3:
        raise FieldError(f"positions must have a trailing axis of length 3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise FieldError("positions must be finite")
    return r


def transverse_frame(axis):
    """Right-handed unit vectors ``(u, v)`` with ``u x v = axis``.

    For ``axis = x`` this gives ``(y, z)``, the frame used to define
    sigma+/- about the spin axis transverse to the waveguide.
    """
    q = np.asarray(axis, dtype=float)
    q = q / np.linalg.norm(q)
    u = np.cross(Z_HAT, q)
    if np.linalg.norm(u) < 1e-8:
        u = np.cross(X_HAT, q)
    u /= np.linalg.norm(u)
    v = np.cross(q, u)
    return u, v


@dataclass(frozen=True)
class VectorFieldSample:
    """Complex field amplitude(s) at one or many points.

    ``E`` has shape ``(..., 3)`` in V/m.
    """

    E: np.ndarray
    wavelength: float

    def __post_init__(self):
        E = np.asarray(self.E, dtype=complex)
        if E.shape[-1] != 3:
            raise FieldError("E must have a trailing axis of length 3")
        if not np.all(np.isfinite(E)):
            raise FieldError("field components must be finite")
        object.__setattr__(self, "E", E)

    @property
    def field2(self):
        return np.sum(np.abs(self.E) ** 2, axis=-1)

    @property
    def intensity(self):
        from .constants import field2_to_intensity

        return field2_to_intensity(self.field2)

    def scaled(self, factor):
        return VectorFieldSample(self.E * factor, self.wavelength)


@dataclass(frozen=True)
class BeamParams:
    """Paraxial Gaussian beam."""

    power: float
    waist: float
    wavelength: float
    polarization: tuple = (0.0, 1.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)
    focus: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.power < 0:
            raise FieldError("beam power must be non-negative")
        if self.waist <= 0:
            raise FieldError("beam waist must be positive")
        if self.wavelength <= 0:
            raise FieldError("wavelength must be positive")
        pol = np.asarray(self.polarization, dtype=complex)
        ax = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(ax) - 1) > 1e-9:
            raise FieldError("propagation axis must be a unit vector")
        if abs(np.linalg.norm(pol) - 1) > 1e-9:
            raise FieldError("polarization must be a unit vector")
        if abs(np.vdot(ax, pol)) > 1e-9:
            raise FieldError("polarization must be transverse to the propagation axis")

    @property
    def rayleigh_range(self):
        return np.pi * self.waist**2 / self.wavelength

    @property
    def peak_intensity(self):
        return 2 * self.power / (np.pi * self.waist**2)

    def width(self, s):
        """1/e^2 intensity radius at distance ``s`` from focus."""
        return self.waist * np.sqrt(1 + (np.asarray(s) / self.rayleigh_range) ** 2)

    def local_coordinates(self, r):
        r = _as_points(r)
        d = r - np.asarray(self.focus, dtype=float)
        s = d @ np.asarray(self.axis, dtype=float)
        rho2 = np.maximum(np.sum(d * d, axis=-1) - s * s, 0.0)
        return s, rho2


def gaussian_beam_field(beam: BeamParams, r) -> VectorFieldSample:
    """Paraxial TEM00 field of ``beam`` at ``r`` (shape ``(3,)`` or ``(N, 3)``)."""
    s, rho2 = beam.local_coordinates(r)
    zr = beam.rayleigh_range
    k = 2 * np.pi / beam.wavelength
    w2 = beam.waist**2 * (1 + (s / zr) ** 2)
    amp0 = np.sqrt(intensity_to_field2(beam.peak_intensity))
    amp = amp0 * beam.waist / np.sqrt(w2) * np.exp(-rho2 / w2)
    phase = k * s + k * rho2 * s / (2 * (s * s + zr * zr)) - np.arctan2(s, zr)
    scalar = amp * np.exp(1j * phase)
    pol = np.asarray(beam.polarization, dtype=complex)
    return VectorFieldSample(scalar[..., None] * pol, beam.wavelength)


@dataclass(frozen=True)
class FunnelProfile:
    """Diffracted near field of the bottom-illuminating beam.

    A fraction ``funnel_fraction`` of the beam power is carried by the
    zeroth-order funnel whose 1/e^2 half-width across the waveguide follows
    ``width``; the remainder is the undisturbed Gaussian.  Along ``y`` the
    funnel keeps the free-space width.  Both parts conserve power at every
    height, so the transverse integral of the intensity is ``beam.power``.

    ``width(z)^2 = w_s^2 + (w_nf^2 - w_s^2)(1 - exp(-z/l_nf)) + w_G(z)^2 s(z)``
    with ``s(z) = 1 - exp(-(z/z_c)^n)``.
    """

    beam: BeamParams
    surface_halfwidth: float = 200e-9
    crossover: float = 65e-6
    taper_power: float = 3.5
    near_field_halfwidth: float = 1.0e-6
    near_field_length: float = 0.6e-6
    funnel_fraction: float = 0.1

    def __post_init__(self):
        if self.surface_halfwidth <= 0:
            raise FieldError("surface half-width must be positive")
        if self.crossover <= 0 or self.taper_power <= 0:
            raise FieldError("crossover scale and taper power must be positive")
        if self.near_field_halfwidth < self.surface_halfwidth:
            raise FieldError("near-field half-width must not be below the surface half-width")
        if self.near_field_length <= 0:
            raise FieldError("near-field length must be positive")
        if not 0 <= self.funnel_fraction <= 1:
            raise FieldError("funnel fraction must lie in [0, 1]")

    def free_width(self, z):
        return self.beam.width(np.asarray(z) - self.beam.focus[2])

    def taper(self, z):
        return -np.expm1(-((np.asarray(z) / self.crossover) ** self.taper_power))

    def width(self, z):
        z = np.asarray(z, dtype=float)
        ws2 = self.surface_halfwidth**2
        nf = (self.near_field_halfwidth**2 - ws2) * -np.expm1(-z / self.near_field_length)
        return np.sqrt(ws2 + nf + self.free_width(z) ** 2 * self.taper(z))

    def intensity(self, r):
        r = _as_points(r)
        x, y, z = r[..., 0], r[..., 1], r[..., 2]
        if np.any(z < 0):
            raise FieldError("funnel field is only defined above the surface (z >= 0)")
        wg = self.free_width(z)
        wx = self.width(z)
        p = self.beam.power
        eta = self.funnel_fraction
        funnel = eta * 2 * p / (np.pi * wx * wg) * np.exp(-2 * x**2 / wx**2 - 2 * y**2 / wg**2)
        background = (1 - eta) * 2 * p / (np.pi * wg**2) * np.exp(-2 * (x**2 + y**2) / wg**2)
        return funnel + background


def funnel_field(profile: FunnelProfile, r) -> VectorFieldSample:
    intensity = profile.intensity(r)
    amp = np.sqrt(intensity_to_field2(intensity))
    pol = np.asarray(profile.beam.polarization, dtype=complex)
    return VectorFieldSample(amp[..., None] * pol, profile.beam.wavelength)


def evanescent_decay_length(wavelength, n_eff):
    """Field 1/e decay length of an evanescent wave with effective index ``n_eff``."""
    if n_eff <= 1:
        raise FieldError("effective index must exceed 1 for an evanescent field")
    return wavelength / (2 * np.pi * np.sqrt(n_eff**2 - 1))


@dataclass(frozen=True)
class WGMFieldParams:
    """Evanescent field of a TM whispering-gallery mode above the straight section.

    ``ellipticity`` is the ratio of the propagation-axis (``y``) to the
    vertical (``z``) field component; the default follows from ``n_eff``.
    The surface intensity on the waveguide axis is ``P / effective_area``.
    """

    circulating_power: float = 3.2e-3
    wavelength: float = 849.1e-9
    n_eff: float = 1.9
    decay_length: float | None = None
    azimuthal_order: int = 196
    halfwidth_x: float = 0.5e-6
    effective_area: float = 3.0e-12
    chirality: str = "cw"
    ellipticity: float | None = None
    waveguide_width: float = 750e-9
    waveguide_height: float = 380e-9

    def __post_init__(self):
        if self.circulating_power < 0:
            raise FieldError("circulating power must be non-negative")
        if self.decay_length is not None and self.decay_length <= 0:
            raise FieldError("decay length must be positive")
        if self.halfwidth_x <= 0 or self.effective_area <= 0:
            raise FieldError("transverse half-width and effective area must be positive")
        if self.chirality not in ("cw", "ccw"):
            raise FieldError("chirality must be 'cw' or 'ccw'")

    @property
    def kappa_inv(self):
        if self.decay_length is not None:
            return self.decay_length
        return evanescent_decay_length(self.wavelength, self.n_eff)

    @property
    def ratio(self):
        if self.ellipticity is not None:
            return self.ellipticity
        return np.sqrt(self.n_eff**2 - 1) / self.n_eff

    @property
    def handedness(self):
        return 1.0 if self.chirality == "cw" else -1.0

    @property
    def peak_intensity(self):
        return self.circulating_power / self.effective_area

    @property
    def circular_degree(self):
        """Signed degree of circular polarization about ``x`` (constant in space)."""
        r = self.ratio
        return self.handedness * 2 * r / (1 + r * r)

    def with_input_power(self, input_power, buildup=80.0):
        return replace(self, circulating_power=input_power * buildup)

    def envelope2(self, r):
        """``|E|^2`` profile without the polarization vector."""
        r = _as_points(r)
        x, z = r[..., 0], r[..., 2]
        return intensity_to_field2(self.peak_intensity) * np.exp(
            -2 * z / self.kappa_inv - 2 * x**2 / self.halfwidth_x**2
        )


def wgm_evanescent_field(params: WGMFieldParams, r) -> VectorFieldSample:
    """``E = A(x, z) (z_hat -+ i r y_hat) / sqrt(1 + r^2)``; CW takes the minus sign."""
    if params.kappa_inv <= 0:
        raise FieldError("decay length must be positive")
    r = _as_points(r)
    if np.any(r[..., 2] < 0):
        raise FieldError("evanescent field is only modelled above the waveguide (z >= 0)")
    amp = np.sqrt(params.envelope2(r))
    ratio = params.ratio
    pol = np.array([0.0, -1j * params.handedness * ratio, 1.0]) / np.sqrt(1 + ratio**2)
    return VectorFieldSample(amp[..., None] * pol, params.wavelength)


def lattice_field(
    top: BeamParams,
    reflectivity: float,
    r,
    reflection_phase: float = np.pi,
    reflection_halfwidth: float | None = None,
) -> VectorFieldSample:
    """Top beam plus its reflection from the waveguide surface.

    ``reflectivity`` is the field reflection coefficient.  The reflected wave
    is the mirror image of the incident beam in the ``z = 0`` plane, limited
    across the waveguide by an optional Gaussian envelope of half-width
    ``reflection_halfwidth``.
    """
    if not 0 <= reflectivity <= 1:
        raise FieldError("reflectivity must lie in [0, 1]")
    r = _as_points(r)
    incident = gaussian_beam_field(top, r)
    if reflectivity == 0:
        return incident
    mirrored = r * np.array([1.0, 1.0, -1.0])
    reflected = gaussian_beam_field(top, mirrored).E
    coeff = reflectivity * np.exp(1j * reflection_phase)
    if reflection_halfwidth is not None:
        coeff = coeff * np.exp(-r[..., 0] ** 2 / reflection_halfwidth**2)
    return VectorFieldSample(incident.E + np.asarray(coeff)[..., None] * reflected, top.wavelength)


def circular_polarization_degree(sample: VectorFieldSample, axis=X_HAT):
    """``(|E.e+*|^2 - |E.e-*|^2) / |E|^2`` with ``e+- = (u +- i v)/sqrt(2)``."""
    u, v = transverse_frame(axis)
    E = sample.E
    norm2 = np.sum(np.abs(E) ** 2, axis=-1)
    if np.any(norm2 <= 0):
        raise FieldError("circular polarization degree is undefined for a zero field")
    e_plus = (u + 1j * v) / np.sqrt(2)
    e_minus = (u - 1j * v) / np.sqrt(2)
    plus = np.abs(E @ e_plus.conj()) ** 2
    minus = np.abs(E @ e_minus.conj()) ** 2
    return (plus - minus) / norm2


@dataclass
class GridField:
    """Trilinear interpolant of a field sampled on a rectilinear grid."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    values: np.ndarray
    wavelength: float
    _interp: RegularGridInterpolator = field(init=False, repr=False)

    def __post_init__(self):
        self._interp = RegularGridInterpolator(
            (self.x, self.y, self.z), self.values, method="linear", bounds_error=True
        )

    def __call__(self, r) -> VectorFieldSample:
        r = _as_points(r)
        flat = r.reshape(-1, 3)
        out = self._interp(flat).reshape(r.shape[:-1] + (3,))
        return VectorFieldSample(out, self.wavelength)


def save_grid_field(path, x, y, z, E, wavelength):
    """Write ``E`` (shape ``(nx, ny, nz, 3)``, complex) in the grid-field format."""
    E = np.asarray(E, dtype=complex)
    data = np.empty(E.shape[:-1] + (6,))
    data[..., 0::2] = E.real
    data[..., 1::2] = E.imag
    np.savez(
        path,
        version=np.array(GRID_FORMAT_VERSION),
        x=np.asarray(x, float),
        y=np.asarray(y, float),
        z=np.asarray(z, float),
        wavelength=np.array(float(wavelength)),
        data=data,
    )


def import_grid_field(path) -> GridField:
    """Load a grid-field ``.npz`` written by :func:`save_grid_field`.

    Required keys: ``version``, ``x``, ``y``, ``z`` (strictly increasing, metres),
    ``wavelength`` and ``data`` of shape ``(nx, ny, nz, 6)`` holding
    ``(Re Ex, Im Ex, Re Ey, Im Ey, Re Ez, Im Ez)``.
    """
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except Exception as exc:  # zip / format errors from numpy
        raise GridFileError(f"cannot read grid field {path}: {exc}") from exc
    with archive:
        missing = {"version", "x", "y", "z", "wavelength", "data"} - set(archive.files)
        if missing:
            raise GridFileError(f"grid field header is missing {sorted(missing)}")
        version = str(archive["version"])
        if version != GRID_FORMAT_VERSION:
            raise GridFileError(f"unsupported grid field version {version!r}")
        axes = [np.asarray(archive[k], dtype=float) for k in ("x", "y", "z")]
        data = np.asarray(archive["data"], dtype=float)
        wavelength = float(archive["wavelength"])
    for name, ax in zip("xyz", axes):
        if ax.ndim != 1 or ax.size < 2:
            raise GridFileError(f"axis {name} must be one-dimensional with at least two nodes")
        if not np.all(np.diff(ax) > 0):
            raise GridFileError(f"axis {name} is not strictly increasing")
    expected = tuple(ax.size for ax in axes) + (6,)
    if data.shape != expected:
        raise GridFileError(f"data shape {data.shape} does not match axes {expected}")
    if not np.all(np.isfinite(data)):
        raise GridFileError("grid field contains non-finite samples")
    values = data[..., 0::2] + 1j * data[..., 1::2]
    return GridField(axes[0], axes[1], axes[2], values, wavelength)
