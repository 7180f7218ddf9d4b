import numpy as np
import pytest

from triscale.errors import DimensionMismatch
from triscale.spectral import (GridSpec, SpectralState, derivative, derivative_sum_norm,
                               hermitian_defect, multi_indices, sobolev_norm, to_coeffs,
                               to_values)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(1, 7)
    with pytest.raises(ValueError):
        GridSpec(0, 16)
    g = GridSpec(2, 16)
    assert g.shape == (16, 16)
    assert g.wavenumbers.min() == -7 and g.wavenumbers.max() == 8
    assert g.mode_index((-1, 3)) == (15, 3)
    with pytest.raises(DimensionMismatch):
        g.mode_index((1,))


def test_round_trip_and_single_mode():
    g = GridSpec(2, 16)
    x, y = g.points
    f = np.cos(x) * np.sin(2 * y)
    c = to_coeffs(f, g)
    np.testing.assert_allclose(to_values(c, g, real=True), f, atol=1e-14)
    assert abs(c[1, 2]) == pytest.approx(0.25)
    assert hermitian_defect(c, g) < 1e-15


def test_spectral_derivative_is_exact_for_trig_polynomials():
    g = GridSpec(1, 32)
    x = g.points[0]
    c = to_coeffs(np.sin(3 * x), g)
    d1 = to_values(derivative(c, g, (1,)), g, real=True)
    d2 = to_values(derivative(c, g, (2,)), g, real=True)
    np.testing.assert_allclose(d1, 3 * np.cos(3 * x), atol=1e-12)
    np.testing.assert_allclose(d2, -9 * np.sin(3 * x), atol=1e-11)


def test_odd_derivative_drops_nyquist():
    g = GridSpec(1, 8)
    x = g.points[0]
    c = to_coeffs(np.cos(4 * x), g)
    assert np.abs(derivative(c, g, (1,))).max() == 0
    assert np.abs(derivative(c, g, (2,))).max() > 0


def test_sobolev_norms():
    g = GridSpec(1, 16)
    x = g.points[0]
    c = to_coeffs(np.cos(2 * x), g)
    # ||cos 2x||_{L2}^2 = pi, weight (1 + 4)^s
    assert sobolev_norm(c, g) == pytest.approx(np.sqrt(np.pi))
    assert sobolev_norm(c, g, 2) == pytest.approx(np.sqrt(np.pi * 25))
    # sum of ||D^a u||^2 for a <= 2: pi (1 + 4 + 16)
    assert derivative_sum_norm(c, g, 2) == pytest.approx(np.sqrt(21 * np.pi))


def test_multi_indices_order():
    assert list(multi_indices(2, 2)) == [(2, 0), (1, 1), (0, 2)]


def test_state_helpers():
    g = GridSpec(2, 8)
    s = SpectralState.zeros(3, g)
    assert s.n == 3 and s.real and s.is_finite()
    with pytest.raises(DimensionMismatch):
        SpectralState(np.zeros((3, 8)), g)
    x, y = g.points
    u = SpectralState.from_values(np.stack([np.cos(x), np.sin(y)]), g)
    np.testing.assert_allclose(u.values()[0], np.cos(x), atol=1e-15)
    np.testing.assert_allclose(u.mode((1, 0))[0], 0.5)
    assert u.copy(time=2.0).time == 2.0
