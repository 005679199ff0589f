import json

import numpy as np
import pytest

from atomfunnel.constants import AU_POLARIZABILITY, H
from atomfunnel.fields import VectorFieldSample, WGMFieldParams, circular_polarization_degree, wgm_evanescent_field
from atomfunnel.lightshift import (
    CPParams,
    HyperfineState,
    LightShiftError,
    Manifold,
    MissingPolarizability,
    PolarizabilitySet,
    ShiftOperator,
    casimir_polder,
    casimir_polder_gradient,
    default_polarizabilities,
    level_shifts,
    shift_operator,
    spin_matrices,
)

POLS = default_polarizabilities()


def test_spin_matrices_commutators():
    for F in (1, 4, 5):
        jx, jy, jz = spin_matrices(F)
        assert np.allclose(jx @ jy - jy @ jx, 1j * jz)
        assert np.allclose(jx @ jx + jy @ jy + jz @ jz, F * (F + 1) * np.eye(2 * F + 1))


def test_hyperfine_state_validation():
    with pytest.raises(LightShiftError):
        HyperfineState.ground(5)
    with pytest.raises(LightShiftError):
        HyperfineState(Manifold.GROUND, 5, 0)
    assert HyperfineState.excited(-5).index == 0


def test_polarizability_table_round_trip(tmp_path):
    rec = POLS.to_records()
    path = tmp_path / "p.json"
    path.write_text(json.dumps(rec))
    again = PolarizabilitySet.load(path)
    assert again.to_records() == rec
    assert len(again) == 4
    with pytest.raises(MissingPolarizability):
        POLS.lookup(Manifold.GROUND, 4, 1064e-9)
    with pytest.raises(LightShiftError):
        PolarizabilitySet.from_records({"version": "other", "entries": []})


def test_ground_tensor_must_vanish():
    from atomfunnel.lightshift import PolarizabilityEntry

    with pytest.raises(LightShiftError):
        PolarizabilitySet({("6S1/2", 4, 935.3): PolarizabilityEntry(1.0, 0.0, 1.0)})


def test_circular_barrier_shift_closed_form():
    p = WGMFieldParams()
    s = wgm_evanescent_field(p, np.array([0.0, 0.0, 0.0]))
    C = float(circular_polarization_degree(s))
    m = np.arange(-4, 5)
    expect = (33519 + 29923 * C * m / 8) * AU_POLARIZABILITY * s.field2
    got = level_shifts(s, Manifold.GROUND, 4, POLS)
    assert np.allclose(got, expect, rtol=1e-12)


def test_batched_levels_match_single_point_operator(rng):
    E = (rng.standard_normal((40, 3)) + 1j * rng.standard_normal((40, 3))) * 1e5
    for wl in (935.3e-9, 849.1e-9):
        batch = level_shifts(VectorFieldSample(E, wl), Manifold.EXCITED, 5, POLS)
        for k in range(E.shape[0]):
            op = shift_operator(VectorFieldSample(E[k], wl), Manifold.EXCITED, 5, POLS)
            assert np.allclose(np.sort(batch[k]), op.eigenvalues(), rtol=1e-10, atol=1e-40)


def test_shift_operator_trace_is_scalar_part(rng):
    E = (rng.standard_normal(3) + 1j * rng.standard_normal(3)) * 1e5
    s = VectorFieldSample(E, 849.1e-9)
    op = shift_operator(s, Manifold.EXCITED, 5, POLS)
    a0 = POLS.lookup(Manifold.EXCITED, 5, 849.1e-9).si()[0]
    assert np.trace(op.matrix).real / 11 == pytest.approx(-a0 * s.field2, rel=1e-12)


def test_shift_operator_checks_hermiticity():
    with pytest.raises(LightShiftError):
        ShiftOperator(np.triu(np.ones((3, 3))), 1)
    with pytest.raises(LightShiftError):
        shift_operator(VectorFieldSample(np.zeros((2, 3)), 849.1e-9), Manifold.GROUND, 4, POLS)


def test_casimir_polder_closed_form_and_gradient():
    cp = CPParams()
    z = np.linspace(30e-9, 2e-6, 500)
    u = casimir_polder(z, cp)
    assert np.allclose(u, -267 * H * 1e-24 / (z**3 * (z + 136e-9)), rtol=1e-14)
    h = 1e-12
    fd = (casimir_polder(z + h, cp) - casimir_polder(z - h, cp)) / (2 * h)
    assert np.allclose(casimir_polder_gradient(z, cp), fd, rtol=1e-5)
    assert abs(casimir_polder(100e-9, cp)) / H / 1e6 == pytest.approx(1.131, abs=1e-3)
    with pytest.raises(LightShiftError):
        CPParams(c4_hz_um4=-1)
