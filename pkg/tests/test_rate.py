import numpy as np
import pytest

from stars_isac.model import SystemConfig, dbm_to_watt, synthesize_channels
from stars_isac.rate import ergodic_rate_approx, ergodic_rate_mc, gamma_target, instantaneous_rate, rate_from_sinr


def test_gamma_target_inverts_rate():
    for R in (0.5, 1.0, 2.5):
        assert rate_from_sinr(gamma_target(R)) == pytest.approx(R)


def test_ergodic_approx_close_to_mc():
    cfg = SystemConfig(N=12, N_v=3, M_t=4, M_r=4, kappa=5.0, P_U_max=float(dbm_to_watt(15.0)))
    ch = synthesize_channels(cfg, 1)
    u = np.exp(2j * np.pi * np.random.default_rng(0).random(12))
    idx = np.arange(12)
    for k in range(2):
        approx = ergodic_rate_approx(cfg, ch, k, np.outer(u, u.conj()), cfg.P_U_max, idx)
        mc, half = ergodic_rate_mc(cfg, ch, k, u, cfg.P_U_max, n_draws=4000, seed=1)
        assert half > 0
        assert abs(approx - mc) / mc < 0.05


def test_rate_increases_with_power():
    cfg = SystemConfig(N=8, N_v=2, M_t=4, M_r=4)
    ch = synthesize_channels(cfg, 2)
    u = np.ones(8, dtype=complex)
    U = np.outer(u, u)
    lo = ergodic_rate_approx(cfg, ch, 0, U, 0.01, np.arange(8))
    hi = ergodic_rate_approx(cfg, ch, 0, U, 0.1, np.arange(8))
    assert hi > lo > 0


def test_instantaneous_rate_zero_power_is_zero():
    cfg = SystemConfig(N=8, N_v=2, M_t=4, M_r=4)
    ch = synthesize_channels(cfg, 3)
    V = np.ones((1, 4), dtype=complex)
    rep = instantaneous_rate(1, ch, cfg, np.ones(8, dtype=complex), [0.0], V)
    assert np.allclose(rep.instantaneous, 0.0)
