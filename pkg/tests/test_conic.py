import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stars_isac.conic import ConicError, ConicProblem, complex_to_real_embedding, inner, trace_inverse_epigraph
from stars_isac.harness.verify import random_kkt_sdp
from stars_isac.model import make_rng


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_random_kkt_sdp_recovers_optimum(n, seed):
    rng = make_rng(seed)
    m = int(rng.integers(1, n * (n + 1) // 2))
    prob, opt, X_opt = random_kkt_sdp(n, m, rng)
    rep = prob.solve(tol=1e-9)
    assert rep.ok
    assert abs(rep.objective - opt) <= 1e-6 * max(1.0, abs(opt))
    assert rep.primal_residual < 1e-7 and rep.dual_residual < 1e-7


def test_lp_bound():
    p = ConicProblem()
    x, y = p.scalar("x"), p.scalar("y")
    p.add_ge(x - 1.0)
    p.add_ge(y - 2.0)
    p.minimize(x + y * 2.0)
    rep = p.solve()
    assert rep.objective == pytest.approx(5.0, abs=1e-6)


def test_trace_inverse_epigraph():
    # min Tr(W) s.t. [[W, I], [I, E]] >= 0 with E fixed gives Tr(E^-1)
    E = np.array([[2.0, 0.5], [0.5, 1.0]])
    p = ConicProblem()
    W = trace_inverse_epigraph(p, p.symmetric("E", 2, psd=False))
    p.add_eq(inner(np.array([[1.0, 0], [0, 0]]), p.var("E")) - 2.0)
    p.add_eq(inner(np.array([[0, 0.5], [0.5, 0]]), p.var("E")) - 0.5)
    p.add_eq(inner(np.array([[0, 0], [0, 1.0]]), p.var("E")) - 1.0)
    p.minimize(W)
    assert p.solve(tol=1e-9).objective == pytest.approx(np.trace(np.linalg.inv(E)), rel=1e-6)


def test_hermitian_variable_and_embedding():
    H = np.array([[2.0, 1j], [-1j, 3.0]])
    R = complex_to_real_embedding(H)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(R)), np.sort(np.repeat(np.linalg.eigvalsh(H), 2)))
    # min Re<C, X> over Tr X = 1, X >= 0 is the smallest eigenvalue of C
    p = ConicProblem()
    X = p.hermitian("X", 2)
    p.add_eq(X.trace().real - 1.0)
    p.minimize(inner(H, X))
    assert p.solve(tol=1e-9).objective == pytest.approx(np.linalg.eigvalsh(H)[0], abs=1e-7)


def test_infeasible_detected():
    p = ConicProblem()
    x = p.scalar("x", nonneg=True)
    p.add_eq(x + 1.0)
    p.minimize(x)
    assert not p.solve().ok


def test_duplicate_variable_rejected():
    p = ConicProblem()
    p.scalar("x")
    with pytest.raises(ConicError):
        p.scalar("x")
