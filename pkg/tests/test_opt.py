import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stars_isac.fim import Partition
from stars_isac.model import SystemConfig, dbm_to_watt, synthesize_channels
from stars_isac.opt_ao import extract_rank_one, feasibility_max_sensors, max_sensor_count, rank_one_gap, run_ao
from stars_isac.opt_pdl import exhaustive_search, one_hot, penalty_value, round_weights, run_pdl


@pytest.mark.parametrize("p_dbm,R", [(5, 1.0), (15, 2.0), (30, 1.0)])
def test_sensor_count_matches_oracle(p_dbm, R):
    cfg = SystemConfig(M_t=4, M_r=1, R_qos=R, P_U_max=float(dbm_to_watt(p_dbm)), P_BS_max=float(dbm_to_watt(15.0)))
    ch = synthesize_channels(cfg, 0)
    for k in range(2):
        assert max_sensor_count(cfg, ch, k) == feasibility_max_sensors(cfg, ch, k)


def test_sensor_count_grows_with_power():
    counts = []
    for p_dbm in (5, 15, 25):
        cfg = SystemConfig(M_t=4, M_r=1, P_U_max=float(dbm_to_watt(p_dbm)), P_BS_max=float(dbm_to_watt(15.0)))
        counts.append(max_sensor_count(cfg, synthesize_channels(cfg, 1), 0))
    assert counts == sorted(counts)


def test_rank_one_helpers():
    v = np.array([1.0, 1j, -1.0])
    U = np.outer(v, v.conj())
    assert rank_one_gap(U) == pytest.approx(0.0, abs=1e-12)
    u = extract_rank_one(U)
    np.testing.assert_allclose(np.abs(u), 1.0)
    assert rank_one_gap(np.eye(3)) == pytest.approx(2.0)


def test_small_ao_is_monotone_and_feasible():
    cfg = SystemConfig(N=8, N_v=2, M_t=4, M_r=4)
    ch = synthesize_channels(cfg, 0)
    res = run_ao(1, cfg, ch, Partition(8, 3))
    assert res.converged and math.isfinite(res.crb)
    crbs = [t["crb_surface"] for t in res.trajectory]
    assert all(b <= a + 1e-8 for a, b in zip(crbs, crbs[1:]))
    np.testing.assert_allclose(np.abs(res.u[:3]), 1.0, atol=1e-9)
    assert np.min(res.qos_slack) >= -1e-7
    assert res.design.P.sum() <= cfg.P_U_max * (1 + 1e-6) * len(cfg.phase_users(1))


def test_one_hot_and_penalty():
    p = one_hot(6, 3)
    assert p.tolist() == [0, 0, 1, 0, 0]
    assert penalty_value(p) == 0.0
    assert penalty_value(np.full(5, 0.2)) == pytest.approx(0.8)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=9))
def test_penalty_nonnegative_on_box(p):
    assert penalty_value(np.array(p)) >= 0.0


def test_round_weights_ties_favour_fewer_pes():
    assert round_weights(np.array([0.1, 0.45, 0.45]))[0] == 2
    assert round_weights(np.array([0.1, 0.2, 0.7])) == [3, 2, 1]


def test_pdl_returns_vertex_no_better_than_exhaustive():
    cfg = SystemConfig(N=6, N_v=2, M_t=4, M_r=4)
    ch = synthesize_channels(cfg, 1)
    pdl = run_pdl(1, cfg, ch)
    ex = exhaustive_search(1, cfg, ch)
    assert 1 <= pdl.N1 <= 5
    assert pdl.crb >= ex.crb * (1 - 1e-6)
    assert ex.crb == min(ex.per_n.values())
