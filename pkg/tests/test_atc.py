import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airtemp.atc import (AtcParamField, angle_diff, atc_eval, atc_eval_stack, atc_values, cycle_projector,
                         harmonic_basis)
from airtemp.errors import DimensionError, SpecError

finite = st.floats(-50, 50, allow_nan=False)


def field_1x1(T0, A, phi, n=365):
    return AtcParamField.constant((1, 1), T0=T0, A=A, phi=phi, n_doy=n)


def test_eval_at_zero():
    assert atc_eval(field_1x1(10, 15, 0), (0, 0), 0) == pytest.approx(10.0)


def test_quarter_period_peak():
    assert atc_eval(field_1x1(10, 15, 0), (0, 0), 365 / 4) == pytest.approx(25.0, abs=1e-5)


def test_formula_oracle_leap_year():
    f = AtcParamField(np.array([[2.5]]), np.array([[7.0]]), np.array([[1.2]]), np.zeros((1, 1)), 366)
    expected = 2.5 + 7.0 * math.sin(2 * math.pi * 100 / 366 + 1.2)
    assert abs(atc_eval(f, (0, 0), 100) - expected) < 1e-6


def test_out_of_bounds_pixel():
    with pytest.raises(IndexError):
        atc_eval(AtcParamField.constant((2, 3)), (2, 0), 0)
    with pytest.raises(IndexError):
        atc_eval(AtcParamField.constant((2, 3)), (0, -1), 0)


def test_field_validation():
    with pytest.raises(SpecError):
        AtcParamField.constant((2, 2), n_doy=360)
    with pytest.raises(DimensionError):
        AtcParamField(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)), np.zeros((2, 2)))


def test_stack_constant_cycle():
    rng = np.random.default_rng(0)
    T0 = rng.uniform(0, 20, (4, 5)).astype(np.float32)
    f = AtcParamField(T0, np.zeros((4, 5)), rng.uniform(-3, 3, (4, 5)), np.zeros((4, 5)))
    stack = atc_eval_stack(f, range(0, 365, 30))
    for ch in stack.data:
        np.testing.assert_array_equal(ch, T0)
    assert stack.mask.all()


def test_stack_single_day_matches_eval():
    rng = np.random.default_rng(1)
    f = AtcParamField(*(rng.uniform(-5, 5, (3, 3)) for _ in range(4)))
    stack = atc_eval_stack(f, [42])
    for r in range(3):
        for c in range(3):
            assert stack.data[0, r, c] == pytest.approx(atc_eval(f, (r, c), 42), abs=1e-5)


def test_stack_pointwise_spot_checks():
    rng = np.random.default_rng(2)
    f = AtcParamField(*(rng.uniform(-20, 20, (6, 7)) for _ in range(4)), n_doy=366)
    stack = atc_eval_stack(f, range(366))
    for _ in range(100):
        d, r, c = rng.integers(366), rng.integers(6), rng.integers(7)
        direct = f.T0[r, c] + f.A[r, c] * math.sin(2 * math.pi * d / 366 + f.phi[r, c])
        assert stack.data[d, r, c] == pytest.approx(direct, abs=1e-4)


def test_stack_rejects_days_outside_year():
    with pytest.raises(IndexError):
        atc_eval_stack(AtcParamField.constant((2, 2)), [0, 365])


@settings(max_examples=60)
@given(finite, finite, st.floats(-7, 7), st.integers(0, 364))
def test_periodicity(T0, A, phi, t):
    f = field_1x1(T0, A, phi)
    assert atc_eval(f, (0, 0), t) == pytest.approx(atc_eval(f, (0, 0), t + 365), abs=1e-5)


@settings(max_examples=60)
@given(finite, finite, st.floats(-7, 7), st.integers(0, 365))
def test_bound(T0, A, phi, t):
    f = field_1x1(T0, A, phi, 366)
    assert abs(atc_eval(f, (0, 0), t) - f.T0[0, 0]) <= abs(f.A[0, 0]) + 1e-5


@settings(max_examples=40)
@given(finite, finite, st.floats(-7, 7), st.sampled_from([365, 366]))
def test_full_period_mean(T0, A, phi, n):
    f = field_1x1(T0, A, phi, n)
    assert atc_values(f, np.arange(n)).astype(np.float64).mean() == pytest.approx(f.T0[0, 0], abs=1e-3)


@settings(max_examples=60)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-10, 10))
def test_canonical_preserves_values(T0, A, phi):
    f = field_1x1(T0, A, phi)
    c = f.canonical()
    assert c.A[0, 0] >= 0 and -math.pi <= c.phi[0, 0] < math.pi
    days = np.arange(0, 365, 7)
    np.testing.assert_allclose(atc_values(c, days), atc_values(f, days), atol=1e-4)


def test_angle_diff_wraps():
    assert angle_diff(3.1, -3.1) == pytest.approx(6.2 - 2 * math.pi)
    assert angle_diff(0.5, 0.2) == pytest.approx(0.3)


def test_cycle_projector_annihilates_cycle():
    days = np.arange(0, 365, 3)
    proj = cycle_projector(days, 365)
    basis = harmonic_basis(days, 365)
    np.testing.assert_allclose(proj @ basis, 0, atol=1e-9)
    np.testing.assert_allclose(proj @ proj, proj, atol=1e-9)
