import numpy as np
import pytest

from stars_isac.estimate import angle_error_deg, mle_spectrum, simulate_echo, spectrum_value, wrap_azimuth_deg
from stars_isac.fim import Partition
from stars_isac.model import Angles, SystemConfig, cscg, make_rng, synthesize_channels


def _setup(seed=0, N=12, N_v=3, n1=4, T=8):
    cfg = SystemConfig(N=N, N_v=N_v, M_t=4, M_r=4, T=T)
    ch = synthesize_channels(cfg, seed)
    part = Partition(N, n1)
    rng = make_rng(seed)
    u = np.where(part.a > 0, np.exp(2j * np.pi * rng.random(N)), 0)
    X = cscg(rng, (N, T))
    return cfg, ch, part, u, X


@pytest.mark.parametrize("phase", [1, 2])
def test_noiseless_exact_recovery(phase):
    cfg, ch, part, u, X = _setup()
    Y = simulate_echo(phase, ch, part, u, X, 0.0)
    sp = mle_spectrum(Y, X, u, part, cfg.N_v, cfg.N_h, step_deg=1.0)
    err = angle_error_deg(sp.estimate, ch.target(phase)[0])
    assert max(err) < 1e-3
    assert sp.alpha_hat == pytest.approx(ch.target(phase)[1], rel=1e-3)


def test_spectrum_invariant_to_echo_scaling():
    cfg, ch, part, u, X = _setup(1)
    Y = simulate_echo(1, ch, part, u, X, cfg.sigma2, seed=3)
    a = spectrum_value((-10.0, 25.0), Y, X, u, part, cfg.N_v, cfg.N_h)[0]
    b = spectrum_value((-10.0, 25.0), 7.0 * Y, X, u, part, cfg.N_v, cfg.N_h)[0]
    assert b == pytest.approx(49.0 * a, rel=1e-10)
    sa = mle_spectrum(Y, X, u, part, cfg.N_v, cfg.N_h, step_deg=2.0)
    sb = mle_spectrum(3.0 * Y, X, u, part, cfg.N_v, cfg.N_h, step_deg=2.0)
    np.testing.assert_allclose(sa.estimate, sb.estimate, atol=1e-4)


def test_pure_noise_echo_statistics():
    cfg, ch, part, u, X = _setup(2, T=400)
    ch = ch.with_alpha([0, 0])
    Y = simulate_echo(1, ch, part, u, X, 2.0, seed=5)
    assert np.mean(np.abs(Y) ** 2) == pytest.approx(2.0, rel=0.05)
    # sample covariance close to sigma2 I
    C = Y @ Y.conj().T / Y.shape[1]
    np.testing.assert_allclose(C, 2.0 * np.eye(part.N2), atol=0.4)


def test_echo_shape_check():
    cfg, ch, part, u, X = _setup()
    with pytest.raises(ValueError):
        mle_spectrum(np.zeros((3, 8)), X, u, part, cfg.N_v, cfg.N_h)


def test_azimuth_wrap():
    assert wrap_azimuth_deg(342.0) == pytest.approx(-18.0)
    assert wrap_azimuth_deg(-180.0) == 180.0
    assert angle_error_deg((-18.0, 30.0), Angles.from_degrees(342.0, 30.0)) == pytest.approx((0.0, 0.0), abs=1e-9)
