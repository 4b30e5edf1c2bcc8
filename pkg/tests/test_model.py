import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stars_isac.model import Angles, SystemConfig, dbm_to_watt, steering, steering_derivative, steering_grid, synthesize_channels, watt_to_dbm

angles = st.builds(Angles, st.floats(-math.pi, math.pi), st.floats(-1.5, 1.5))


def test_steering_layout_row_major():
    # element n sits in row n // N_h and column n % N_h
    a = Angles(0.0, math.asin(0.5))
    eps = steering(a, 2, 3)
    np.testing.assert_allclose(eps, np.exp(1j * np.pi * 0.5 * np.array([0, 1, 2, 0, 1, 2])))
    b = Angles(math.pi / 2, 0.0)
    np.testing.assert_allclose(steering(b, 2, 3), np.exp(1j * np.pi * np.array([0, 0, 0, 1, 1, 1])))


@given(angles)
def test_steering_unit_modulus_and_grid_agrees(a):
    eps = steering(a, 3, 4)
    np.testing.assert_allclose(np.abs(eps), 1.0)
    np.testing.assert_allclose(steering_grid(np.array([a.azimuth]), np.array([a.elevation]), 3, 4)[0], eps)


@settings(max_examples=30)
@given(angles, st.sampled_from(["azimuth", "elevation"]))
def test_steering_derivative_matches_finite_difference(a, wrt):
    h = 1e-6
    if wrt == "azimuth":
        lo, hi = Angles(a.azimuth - h, a.elevation), Angles(a.azimuth + h, a.elevation)
    else:
        if abs(a.elevation) > 1.5 - 2 * h:
            return
        lo, hi = Angles(a.azimuth, a.elevation - h), Angles(a.azimuth, a.elevation + h)
    fd = (steering(hi, 2, 3) - steering(lo, 2, 3)) / (2 * h)
    np.testing.assert_allclose(steering_derivative(a, 2, 3, wrt), fd, atol=1e-7)


def test_angles_validation():
    with pytest.raises(ValueError):
        Angles(0.0, math.pi / 2)
    with pytest.raises(ValueError):
        Angles(float("nan"), 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SystemConfig(N=10, N_v=3)
    with pytest.raises(ValueError):
        SystemConfig(K=2, K1=0)
    with pytest.raises(ValueError):
        SystemConfig(user_distances=(20.0,))
    assert SystemConfig(N=12, N_v=3).N_h == 4


def test_db_conversions():
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert watt_to_dbm(1e-3) == pytest.approx(0.0)


def test_channels_deterministic_and_shaped():
    cfg = SystemConfig(N=12, N_v=3, M_t=4, M_r=3, K=3, K1=1, user_distances=(10.0, 20.0, 30.0))
    a, b = synthesize_channels(cfg, 5), synthesize_channels(cfg, 5)
    np.testing.assert_array_equal(a.h, b.h)
    assert a.G_r.shape == (12, 3) and a.G_t.shape == (12, 4) and a.h.shape == (12, 3)
    assert not np.allclose(a.h, synthesize_channels(cfg, 6).h)


def test_rician_power_scaling():
    # E|g|^2 = L^2 per entry for a Rician draw with unit-modulus LoS
    cfg = SystemConfig(N=400, N_v=20, M_t=1, M_r=1, kappa=3.0)
    ch = synthesize_channels(cfg, 0)
    assert np.mean(np.abs(ch.G_r) ** 2) / ch.pathloss_r**2 == pytest.approx(1.0, rel=0.1)
