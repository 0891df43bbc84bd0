import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canontrace.fields import CoefficientField, fourier_field, random_field, random_modes


def test_constant_arithmetic():
    a = CoefficientField(2.0)
    b = CoefficientField(3.0)
    assert (a * b).values == 6.0
    assert (a - b).is_constant
    assert (-a).values == -2.0


def test_incompatible_grids_rejected():
    a = random_field((1.0,), 16)
    b = random_field((1.0,), 32)
    with pytest.raises(ValueError):
        a + b


def test_spectral_derivative_of_band_limited_field():
    L = (2.0,)
    f = CoefficientField.from_function(lambda x: np.sin(2 * np.pi * 3 * x / 2.0), L, 32)
    exact = 2 * np.pi * 3 / 2.0 * np.cos(2 * np.pi * 3 * np.arange(32) * 2.0 / 32 / 2.0)
    assert np.max(np.abs(f.derivative(0).values - exact)) < 1e-12


def test_derivative_2d_axes():
    L = (1.0, 2.0)
    f = CoefficientField.from_function(lambda x, y: np.cos(2 * np.pi * x) * np.sin(np.pi * y), L, 32)
    x, y = np.meshgrid(np.arange(32) / 32, np.arange(32) * 2.0 / 32, indexing="ij")
    assert np.max(np.abs(f.derivative(1).values - np.pi * np.cos(2 * np.pi * x) * np.cos(np.pi * y))) < 1e-12


def test_integral_and_mean():
    f = CoefficientField.from_function(lambda x, y: 1 + np.cos(2 * np.pi * x), (1.0, 3.0), 16)
    assert f.integral() == pytest.approx(3.0, abs=1e-13)
    assert f.mean() == pytest.approx(1.0, abs=1e-13)


def test_fourier_interpolation_off_grid():
    f = CoefficientField.from_function(lambda x: np.cos(2 * np.pi * 2 * x) + 0.5 * np.sin(2 * np.pi * x), (1.0,), 16)
    x = 0.123
    assert f.at([x]) == pytest.approx(np.cos(4 * np.pi * x) + 0.5 * np.sin(2 * np.pi * x), abs=1e-13)


def test_resample_preserves_band_limited_field():
    f = random_field((1.0, 1.0), 16, band=2, seed=4)
    g = random_field((1.0, 1.0), 48, band=2, seed=4)
    assert np.max(np.abs(f.resample(48).values - g.values)) < 1e-13


def test_random_field_normalization_independent_of_N():
    a = random_field((1.0,), 64, band=3, amplitude=0.2, seed=9)
    b = random_field((1.0,), 256, band=3, amplitude=0.2, seed=9)
    assert np.allclose(a.values, b.values[::4], atol=1e-14)
    assert b.max_abs() == pytest.approx(0.2, rel=1e-2)


def test_random_modes_are_mean_free_and_seeded():
    m1 = random_modes(2, band=2, seed=3)
    m2 = random_modes(2, band=2, seed=3)
    assert m1 == m2
    assert all(any(m["k"]) for m in m1)


def test_fourier_field_rejects_bad_modes():
    with pytest.raises(ValueError):
        fourier_field((1.0,), 8, [{"k": [1, 0], "cos": 1.0}])
    with pytest.raises(ValueError):
        fourier_field((1.0,), 8, [{"k": [1], "amp": 1.0}])


def test_json_round_trip_grid_and_complex():
    f = random_field((1.0, 2.0), 8, seed=1) * (1 + 0.5j)
    data = json.loads(json.dumps(f.to_json()))
    g = CoefficientField.from_json(data)
    assert np.array_equal(g.values, f.values)
    assert CoefficientField.from_json(CoefficientField(1.5).to_json()).values == 1.5


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-3, 3))
def test_derivative_is_linear_and_kills_constants(seed, c):
    f = random_field((1.0, 1.0), 16, seed=seed)
    d = (f * c + 1.0).derivative(0)
    assert np.max(np.abs(d.values - c * f.derivative(0).values)) < 1e-10
