"""Physical constants and unit helpers (SI throughout)."""

import numpy as np
from scipy import constants as csts

H = csts.h
HBAR = csts.hbar
KB = csts.k
EPS0 = csts.epsilon_0
C = csts.c
G_GRAV = csts.g
AMU = csts.atomic_mass

# cesium-133
M_CS = 132.905451961 * AMU
LAMBDA_D2 = 852.34727582e-9
GAMMA_D2 = 2 * np.pi * 5.2e6

# atomic unit of polarizability, C^2 m^2 / J
AU_POLARIZABILITY = 1.648777e-41

TWO_PI = 2 * np.pi


def joule_to_mhz(energy):
    return np.asarray(energy) / H / 1e6


def joule_to_uk(energy):
    return np.asarray(energy) / KB / 1e-6


def uk_to_joule(temperature_uk):
    return np.asarray(temperature_uk) * 1e-6 * KB


def mhz_to_joule(freq_mhz):
    return np.asarray(freq_mhz) * 1e6 * H


def intensity_to_field2(intensity):
    """|E|^2 of the positive-frequency amplitude carrying ``intensity``.

    The package writes a real field as ``E exp(-i w t) + c.c.`` so that
    ``I = 2 eps0 c |E|^2`` and the scalar shift is ``-alpha0 |E|^2``.
    """
    return np.asarray(intensity) / (2 * EPS0 * C)


def field2_to_intensity(field2):
    return 2 * EPS0 * C * np.asarray(field2)
