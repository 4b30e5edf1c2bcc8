"""Oracle checks run by the ``verify`` algorithm and by the test-suite.

Each check builds a random instance, computes a quantity two independent
ways and reports the worst relative disagreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..conic import ConicProblem, inner
from ..fim import Partition, SurfaceState, fim_extended, fim_fixed_partition
from ..model import Angles, ChannelSet, SystemConfig, cscg, make_rng, steering, synthesize_channels
from ..rate import ergodic_rate_approx, ergodic_rate_mc


@dataclass
class CheckResult:
    name: str
    value: float  # worst relative deviation (or absolute error where stated)
    tol: float
    detail: dict

    @property
    def passed(self) -> bool:
        return bool(self.value < self.tol)


def echo_mean(psi: np.ndarray, channels: ChannelSet, partition: Partition, u: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Noiseless echo vec(alpha B eps eps^T A Theta X) for psi = (az, el, Re alpha, Im alpha)."""
    eps = steering(Angles(float(psi[0]), float(psi[1])), channels.N_v, channels.N_h)
    alpha = psi[2] + 1j * psi[3]
    n1 = partition.N1
    z = X[:n1].T @ (u[:n1] * eps[:n1])
    return (alpha * np.outer(eps[n1:], z)).ravel()


def fim_finite_difference(phase, channels: ChannelSet, partition: Partition, u: np.ndarray, X: np.ndarray, sigma2: float, step: float = 1e-6) -> np.ndarray:
    """F[h, v] = (2 / sigma2) Re(dq_h^H dq_v) with central differences of the echo mean."""
    angles, alpha = channels.target(phase)
    psi0 = np.array([angles.azimuth, angles.elevation, alpha.real, alpha.imag])
    J = []
    for i in range(4):
        h = step * max(1.0, abs(psi0[i])) if i < 2 else step * max(abs(alpha), 1e-300)
        e = np.zeros(4)
        e[i] = h
        J.append((echo_mean(psi0 + e, channels, partition, u, X) - echo_mean(psi0 - e, channels, partition, u, X)) / (2 * h))
    J = np.array(J)
    return 2.0 / sigma2 * np.real(J.conj() @ J.T)


def rel_dev(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.max(np.abs(A - B)) / max(np.max(np.abs(B)), 1e-300))


def random_instance(rng: np.random.Generator, N: int, T: int, M_t: int = 3):
    """Random small scenario: channels, partition, unit-modulus u and frames X."""
    N_v = next(v for v in (2, 1) if N % v == 0)
    cfg = SystemConfig(N=N, N_v=N_v, M_t=M_t, M_r=2, T=T)
    ch = synthesize_channels(cfg, int(rng.integers(2**31)))
    ch = ch.with_alpha(ch.alpha * np.exp(2j * np.pi * rng.random(2)))
    part = Partition(N, int(rng.integers(1, N)))
    u = np.where(part.a > 0, np.exp(2j * np.pi * rng.random(N)), 0)
    X = cscg(rng, (N, T)) * 0.1
    return cfg, ch, part, u, X


def check_fim_oracle(n_instances: int = 50, seed: int = 0) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        N = int(rng.integers(2, 9))
        T = int(rng.integers(1, 5))
        cfg, ch, part, u, X = random_instance(rng, N, T)
        phase = int(rng.integers(1, 3))
        R_x = X @ X.conj().T / T
        F = fim_extended(phase, ch, part, SurfaceState(u), R_x, T, cfg.sigma2, check=False).full()
        F_fd = fim_finite_difference(phase, ch, part, u, X, cfg.sigma2)
        worst = max(worst, rel_dev(F, F_fd))
    return CheckResult("fim_oracle", worst, 1e-5, {"instances": n_instances})


def check_partition_equivalence(n_instances: int = 10, N: int = 8, seed: int = 1) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        cfg, ch, _, _, X = random_instance(rng, N, 4)
        R_x = X @ X.conj().T / X.shape[1]
        phase = int(rng.integers(1, 3))
        for n1 in range(1, N):
            part = Partition(N, n1)
            u = np.where(part.a > 0, np.exp(2j * np.pi * rng.random(N)), 0)
            F_e = fim_extended(phase, ch, part, SurfaceState(u), R_x, 4, cfg.sigma2, check=False).full()
            F_f = fim_fixed_partition(phase, ch, part, SurfaceState(u), R_x, 4, cfg.sigma2).full()
            worst = max(worst, rel_dev(F_e, F_f))
    return CheckResult("partition_equivalence", worst, 1e-9, {"instances": n_instances, "N": N})


def random_kkt_sdp(n: int, m: int, rng: np.random.Generator, rank: int | None = None):
    """SDP  min <C, X>  s.t. <A_i, X> = b_i, X >= 0  with a known strictly complementary solution.

    Returns (problem, optimal value, X*).
    """
    rank = rank if rank is not None else int(rng.integers(1, n))
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(0.5, 2.0, n)
    X_opt = (Q[:, :rank] * lam[:rank]) @ Q[:, :rank].T
    S_opt = (Q[:, rank:] * lam[rank:]) @ Q[:, rank:].T
    A = [0.5 * (G + G.T) for G in rng.standard_normal((m, n, n))]
    A[0] = np.eye(n)  # keeps the feasible set bounded
    y = rng.standard_normal(m)
    b = np.array([np.sum(Ai * X_opt) for Ai in A])
    C = S_opt + sum(yi * Ai for yi, Ai in zip(y, A))
    prob = ConicProblem()
    X = prob.symmetric("X", n)
    for Ai, bi in zip(A, b):
        prob.add_eq(inner(Ai, X) - bi)
    prob.minimize(inner(C, X))
    return prob, float(np.sum(C * X_opt)), X_opt


def check_conic_kkt(n_problems: int = 20, seed: int = 2, tol: float = 1e-9) -> CheckResult:
    rng = make_rng(seed)
    worst_obj, worst_res = 0.0, 0.0
    for _ in range(n_problems):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, n * (n + 1) // 2))
        prob, opt, _ = random_kkt_sdp(n, m, rng)
        rep = prob.solve(tol=tol)
        worst_obj = max(worst_obj, abs(rep.objective - opt) / max(1.0, abs(opt)))
        worst_res = max(worst_res, rep.primal_residual, rep.dual_residual)
    return CheckResult("conic_kkt", worst_obj, 1e-6, {"problems": n_problems, "max_residual": worst_res, "residual_ok": worst_res < 1e-7})


def check_lemma1(n_draws: int = 2000, seed: int = 3, kappa: float = 10.0) -> CheckResult:
    cfg = SystemConfig(N=10, N_v=5, kappa=kappa)
    ch = synthesize_channels(cfg, seed)
    u = np.ones(cfg.N, dtype=complex)
    worst = 0.0
    for k in range(cfg.K):
        approx = ergodic_rate_approx(cfg, ch, k, np.outer(u, u.conj()), cfg.P_U_max)
        mc, _ = ergodic_rate_mc(cfg, ch, k, u, cfg.P_U_max, n_draws=n_draws, seed=seed)
        worst = max(worst, abs(approx - mc) / mc)
    return CheckResult("lemma1_rate", worst, 0.05, {"draws": n_draws, "kappa": kappa})


CHECKS = {
    "fim_oracle": check_fim_oracle,
    "partition_equivalence": check_partition_equivalence,
    "conic_kkt": check_conic_kkt,
    "lemma1_rate": check_lemma1,
}


def run_checks(seed: int = 0, names=None) -> list[CheckResult]:
    out = []
    for name in names or CHECKS:
        fn = CHECKS[name]
        r = fn(seed=seed + list(CHECKS).index(name))
        if not math.isfinite(r.value):
            r.value = math.inf
        out.append(r)
    return out
