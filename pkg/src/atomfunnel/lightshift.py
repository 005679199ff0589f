"""Scalar, vector and tensor light shifts and the atom-surface potential.

All energies are in joules.  Polarizabilities are stored in atomic units and
converted with :data:`~atomfunnel.constants.AU_POLARIZABILITY`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .constants import AU_POLARIZABILITY, H
from .fields import X_HAT, VectorFieldSample, transverse_frame

POLARIZABILITY_FORMAT_VERSION = "atomfunnel-polarizability-1"
WAVELENGTH_MATCH_NM = 0.05


class LightShiftError(ValueError):
    pass


class MissingPolarizability(LightShiftError, KeyError):
    pass


class Manifold(str, Enum):
    GROUND = "6S1/2"
    EXCITED = "6P3/2"


_ALLOWED_F = {Manifold.GROUND: (3, 4), Manifold.EXCITED: (2, 3, 4, 5)}


@dataclass(frozen=True)
class HyperfineState:
    manifold: Manifold
    F: int
    m: int

    def __post_init__(self):
        object.__setattr__(self, "manifold", Manifold(self.manifold))
        if self.F not in _ALLOWED_F[self.manifold]:
            raise LightShiftError(f"F={self.F} is not a hyperfine level of {self.manifold.value}")
        if abs(self.m) > self.F:
            raise LightShiftError(f"|m_F|={abs(self.m)} exceeds F={self.F}")

    @property
    def index(self):
        """Position of this sublevel in the ascending ``m = -F..F`` basis."""
        return self.m + self.F

    @classmethod
    def ground(cls, m, F=4):
        return cls(Manifold.GROUND, F, m)

    @classmethod
    def excited(cls, m, F=5):
        return cls(Manifold.EXCITED, F, m)


@dataclass(frozen=True)
class PolarizabilityEntry:
    alpha0: float
    alpha1: float
    alpha2: float

    def si(self):
        return tuple(a * AU_POLARIZABILITY for a in (self.alpha0, self.alpha1, self.alpha2))


class PolarizabilitySet:
    """Table of ``(alpha0, alpha1, alpha2)`` keyed by manifold, F and wavelength."""

    def __init__(self, entries):
        self._entries = {}
        for (manifold, F, wavelength_nm), entry in entries.items():
            manifold = Manifold(manifold)
            if manifold is Manifold.GROUND and entry.alpha2 != 0:
                raise LightShiftError("ground-state tensor polarizability must be zero")
            self._entries[(manifold, int(F), float(wavelength_nm))] = entry

    @classmethod
    def from_records(cls, payload):
        if payload.get("version") != POLARIZABILITY_FORMAT_VERSION:
            raise LightShiftError(f"unsupported polarizability table version {payload.get('version')!r}")
        if payload.get("units", "atomic") != "atomic":
            raise LightShiftError("polarizabilities must be given in atomic units")
        entries = {}
        for rec in payload["entries"]:
            key = (rec["manifold"], rec["F"], rec["wavelength_nm"])
            entries[key] = PolarizabilityEntry(rec["alpha0"], rec["alpha1"], rec["alpha2"])
        return cls(entries)

    @classmethod
    def load(cls, path=None):
        if path is None:
            text = resources.files("atomfunnel.data").joinpath("polarizabilities.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_records(json.loads(text))

    def to_records(self):
        return {
            "version": POLARIZABILITY_FORMAT_VERSION,
            "units": "atomic",
            "entries": [
                {"manifold": m.value, "F": F, "wavelength_nm": wl,
                 "alpha0": e.alpha0, "alpha1": e.alpha1, "alpha2": e.alpha2}
                for (m, F, wl), e in sorted(self._entries.items(), key=lambda kv: (kv[0][0].value, kv[0][1], kv[0][2]))
            ],
        }

    def lookup(self, manifold, F, wavelength) -> PolarizabilityEntry:
        """Entry for ``wavelength`` in metres, matched to within 0.05 nm."""
        manifold = Manifold(manifold)
        wl_nm = wavelength * 1e9
        for (m, f, wl), entry in self._entries.items():
            if m is manifold and f == F and abs(wl - wl_nm) <= WAVELENGTH_MATCH_NM:
                return entry
        raise MissingPolarizability(f"no polarizability for {manifold.value} F={F} at {wl_nm:.2f} nm")

    def __len__(self):
        return len(self._entries)


def default_polarizabilities():
    return PolarizabilitySet.load()


def spin_matrices(F):
    """``(Jx, Jy, Jz)`` for spin ``F`` in the ascending ``m = -F..F`` basis."""
    m = np.arange(-F, F + 1, dtype=float)
    jp = np.diag(np.sqrt(F * (F + 1) - m[:-1] * (m[:-1] + 1)), -1)
    jm = jp.T
    return (jp + jm) / 2, (jp - jm) / 2j, np.diag(m).astype(complex)


def lab_spin_operators(F, axis=X_HAT):
    """Spin operators along the lab ``x, y, z`` with ``m`` quantized along ``axis``."""
    u, v = transverse_frame(axis)
    q = np.asarray(axis, float) / np.linalg.norm(axis)
    jx, jy, jz = spin_matrices(F)
    return np.array([u[k] * jx + v[k] * jy + q[k] * jz for k in range(3)])


@dataclass(frozen=True)
class ShiftOperator:
    """Hermitian light-shift matrix over the ``m = -F..F`` basis (joules)."""

    matrix: np.ndarray
    F: int

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=complex)
        if M.shape != (2 * self.F + 1, 2 * self.F + 1):
            raise LightShiftError("shift operator dimension does not match F")
        scale = max(np.abs(M).max(), 1e-300)
        if np.abs(M - M.conj().T).max() > 1e-12 * scale:
            raise LightShiftError("shift operator is not Hermitian")
        object.__setattr__(self, "matrix", (M + M.conj().T) / 2)

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    def level_shifts(self):
        """Eigenvalues labelled by the ``m`` state with which each eigenvector overlaps most."""
        w, V = np.linalg.eigh(self.matrix)
        rows, cols = linear_sum_assignment(-np.abs(V) ** 2)
        out = np.empty_like(w)
        out[rows] = w[cols]
        return out

    def __add__(self, other):
        if other.F != self.F:
            raise LightShiftError("cannot add shift operators of different F")
        return ShiftOperator(self.matrix + other.matrix, self.F)


def _rank_prefactors(alpha, F):
    a0, a1, a2 = alpha.si()
    tensor = 0.0
    if a2 != 0:
        if F < 1:
            raise LightShiftError("tensor shift requires F >= 1")
        tensor = -a2 * 3.0 / (F * (2 * F - 1))
    return a0, a1, tensor


def shift_operator(sample: VectorFieldSample, manifold, F, pols: PolarizabilitySet, axis=X_HAT) -> ShiftOperator:
    """Light-shift matrix for a single field sample."""
    E = np.asarray(sample.E, dtype=complex)
    if E.shape != (3,):
        raise LightShiftError("shift_operator takes a single field sample; use level_shifts for batches")
    alpha = pols.lookup(manifold, F, sample.wavelength)
    a0, a1, tensor = _rank_prefactors(alpha, F)
    Fk = lab_spin_operators(F, axis)
    dim = 2 * F + 1
    e2 = np.vdot(E, E).real
    M = -a0 * e2 * np.eye(dim, dtype=complex)
    if a1 != 0:
        cross = np.cross(E, E.conj())
        M = M - 1j * a1 * np.tensordot(cross, Fk, axes=1) / (2 * F)
    if tensor != 0:
        ff = F * (F + 1)
        for mu in range(3):
            for nu in range(3):
                c = E[mu] * E[nu].conj()
                if c == 0:
                    continue
                q = 0.5 * (Fk[mu] @ Fk[nu] + Fk[nu] @ Fk[mu])
                if mu == nu:
                    q = q - ff / 3 * np.eye(dim)
                M = M + tensor * c * q
    return ShiftOperator(M, F)


def vector_axis_projection(E, axis=X_HAT):
    """Signed magnitude of ``-i E x E*`` relative to ``axis`` (shape ``E.shape[:-1]``)."""
    E = np.asarray(E, dtype=complex)
    B = (-1j * np.cross(E, E.conj())).real
    mag = np.linalg.norm(B, axis=-1)
    proj = B @ np.asarray(axis, float)
    return np.where(proj < 0, -mag, mag)


def level_shifts(sample: VectorFieldSample, manifold, F, pols: PolarizabilitySet, axis=X_HAT):
    """Adiabatic level shifts, shape ``sample.E.shape[:-1] + (2F+1,)``.

    Without a tensor part the spectrum is ``-a0|E|^2 + a1 m |B| / (2F)`` with
    ``B = -i E x E*``, labelled by ``m`` along ``axis`` (sign-matched to
    ``B``).  With a tensor part the operator is diagonalized point by point.
    """
    alpha = pols.lookup(manifold, F, sample.wavelength)
    a0, a1, tensor = _rank_prefactors(alpha, F)
    E = np.asarray(sample.E, dtype=complex)
    m = np.arange(-F, F + 1, dtype=float)
    if tensor == 0:
        e2 = np.sum(np.abs(E) ** 2, axis=-1)
        b = vector_axis_projection(E, axis)
        return -a0 * e2[..., None] + a1 * b[..., None] * m / (2 * F)
    flat = E.reshape(-1, 3)
    M = _batched_operator(flat, F, a0, a1, tensor, axis)
    w, V = np.linalg.eigh(M)
    weight = np.abs(V) ** 2
    # a column weight above 1/2 makes the dominant-m labelling the optimal assignment
    label = np.argmax(weight, axis=1)
    out = np.empty_like(w)
    dim = 2 * F + 1
    ok = np.all(np.sort(label, axis=1) == np.arange(dim), axis=1) & np.all(weight.max(axis=1) > 0.5, axis=1)
    rows = np.nonzero(ok)[0]
    out[rows[:, None], label[rows]] = w[rows]
    for i in np.nonzero(~ok)[0]:
        r_idx, c_idx = linear_sum_assignment(-weight[i])
        out[i, r_idx] = w[i, c_idx]
    return out.reshape(E.shape[:-1] + (dim,))


def _batched_operator(E, F, a0, a1, tensor, axis):
    """Shift matrices for ``E`` of shape ``(n, 3)``."""
    Fk = lab_spin_operators(F, axis)
    dim = 2 * F + 1
    e2 = np.sum(np.abs(E) ** 2, axis=-1)
    M = -a0 * e2[:, None, None] * np.eye(dim)
    if a1 != 0:
        cross = np.cross(E, E.conj())
        M = M - 1j * a1 * (cross @ Fk.reshape(3, dim * dim)).reshape(-1, dim, dim) / (2 * F)
    if tensor != 0:
        Q = 0.5 * (np.einsum("aij,bjk->abik", Fk, Fk) + np.einsum("bij,ajk->abik", Fk, Fk))
        Q = Q - F * (F + 1) / 3 * np.eye(3)[:, :, None, None] * np.eye(dim)
        EE = (E[:, :, None] * E.conj()[:, None, :]).reshape(len(E), 9)
        M = M + tensor * (EE @ Q.reshape(9, dim * dim)).reshape(-1, dim, dim)
    return M


@dataclass(frozen=True)
class CPParams:
    """Ground-state atom-surface coefficients; ``c4_hz_um4`` is ``C4/h``."""

    c4_hz_um4: float = 267.0
    lambda_bar: float = 136e-9

    def __post_init__(self):
        if self.c4_hz_um4 <= 0 or self.lambda_bar <= 0:
            raise LightShiftError("C4 and the reduced wavelength must be positive")

    @property
    def c4(self):
        return self.c4_hz_um4 * H * 1e-24


def casimir_polder(z, p: CPParams = CPParams()):
    """``-C4 / (z^3 (z + lambda_bar))`` in joules."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise LightShiftError("Casimir-Polder potential requires z > 0")
    return -p.c4 / (z**3 * (z + p.lambda_bar))


def casimir_polder_gradient(z, p: CPParams = CPParams()):
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise LightShiftError("Casimir-Polder potential requires z > 0")
    lb = p.lambda_bar
    return p.c4 * (3 * z**2 * (z + lb) + z**3) / (z**3 * (z + lb)) ** 2
