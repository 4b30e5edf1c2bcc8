"""Fixed-partition optimisation: waveform/power SDP, rank-one surface SCA and AO.

All SDPs are solved in normalised units: R_s / P_BS, P / P_U, and the FIM
congruence-scaled by diag(1, 1, t, t) and multiplied by ``f0`` so that the
epigraph objective is O(1) at the reference point.  The reported CRB is
always re-evaluated exactly from the returned variables.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .conic import ConicProblem, Expr, bmat, inner, trace_inverse_epigraph
from .fim import (
    DesignAffineMap,
    FimBlocks,
    Partition,
    ProbingDesign,
    SurfaceState,
    UAffineMap,
    UnidentifiableError,
    crb_from_fim,
    crb_trace_or_inf,
    design_affine_map,
    fim_extended,
    probing_covariance,
    u_affine_map,
)
from .model import ChannelSet, SystemConfig, normalize_phase
from .rate import (
    ergodic_bracket_matrix,
    ergodic_scale,
    gamma_target,
    matched_filter,
)

log = logging.getLogger(__name__)

SOLVER_TOL = 1e-8
# relative QoS back-off inside the SDPs so rank-one extraction stays feasible
QOS_MARGIN = 1e-6
# value of the normalised objective at the reference point; the rank penalty
# 1/(2 rho1) is measured against this scale
OBJ_SCALE = 1e4


def solve_robust(prob: ConicProblem, tol: float, what: str):
    """Solve, retrying with looser tolerances when the IPM loses precision."""
    rep = None
    t = tol
    while t <= 1e-6 * 1.0001:
        rep = prob.solve(tol=t)
        if rep.status == "optimal":
            return rep
        if rep.status == "max_iter" and rep.primal_residual < 1e-6 and rep.gap < 1e-6:
            return rep
        t *= 10.0
    if rep.status == "infeasible":
        raise InfeasibleError(f"{what} infeasible")
    raise SolverFailure(f"{what}: {rep.status}")


class InfeasibleError(RuntimeError):
    """QoS constraints cannot be met."""


class SolverFailure(RuntimeError):
    pass


@dataclass
class AoSchedule:
    rho1_0: float = 1e-2
    c1: float = 3.0
    rho1_floor: float = 1e-8
    eps1: float = 1e-6
    eps2: float = 1e-5  # change of the CRB trace (rad^2)
    max_sca: int = 40
    max_ao: int = 30
    stagnation_rounds: int = 10
    solver_tol: float = SOLVER_TOL
    n_randomizations: int = 50


# ---------------------------------------------------------------------------
# QoS models
# ---------------------------------------------------------------------------


class ErgodicQos:
    """Lemma-1 QoS rows for each user of a phase: P_k c_k bracket_k(U) >= gamma sigma2."""

    def __init__(self, config: SystemConfig, channels: ChannelSet, phase, idx: np.ndarray):
        self.users = config.phase_users(phase)
        self.gamma = gamma_target(config.R_qos)
        self.sigma2 = config.sigma2
        self.idx = idx
        self.Q = [ergodic_bracket_matrix(config, channels, k, idx) for k in self.users]
        self.scale = [ergodic_scale(config, channels, k) * config.sigma2 for k in self.users]  # P * scale * bracket = SNR * sigma2

    @property
    def active(self) -> bool:
        return self.gamma > 0 and len(self.users) > 0

    def signal(self, U: np.ndarray) -> np.ndarray:
        """Received power per unit transmit power, one entry per user."""
        return np.array([s * float(np.real(np.sum(Q * U))) for Q, s in zip(self.Q, self.scale)])

    def slack(self, U: np.ndarray, P: np.ndarray) -> np.ndarray:
        need = self.gamma * self.sigma2
        return (np.asarray(P) * self.signal(U) - need) / ((1 + self.gamma) * self.sigma2)

    def design_rows(self, prob: ConicProblem, Pbar: list, P_U: float, U: np.ndarray, margin: float) -> None:
        if not self.active:
            return
        sig = self.signal(U)
        # never ask for more back-off than full power provides at this surface
        head = float(np.min(P_U * sig / (self.gamma * self.sigma2))) - 1.0
        margin = min(margin, head)
        need = self.gamma * self.sigma2 * (1 + margin)
        for Pk, s in zip(Pbar, sig):
            a = P_U * s / need
            prob.add_ge((Pk * a - 1.0) / max(1.0, abs(a)))

    def surface_rows(self, prob: ConicProblem, U: Expr, P: np.ndarray, margin: float) -> None:
        if not self.active:
            return
        need = self.gamma * self.sigma2 * (1 + margin)
        for Q, s, Pk in zip(self.Q, self.scale, P):
            coef = Q * (Pk * s / need)
            nrm = max(1.0, np.abs(coef).max())
            prob.add_ge((inner(coef, U) - 1.0) / nrm)


class InstantQos:
    """SINR rows P_i g_ii - gamma (sum_j P_j g_ij + sigma2) >= 0 with fixed combiners."""

    def __init__(self, coeffs, idx: np.ndarray):
        self.c = coeffs  # rate.QosCoefficients on the full N x N grid
        self.users = coeffs.users
        self.gamma = coeffs.gamma
        self.sigma2 = coeffs.sigma2
        self.idx = idx

    @property
    def active(self) -> bool:
        return self.gamma > 0 and len(self.users) > 0

    def _Q(self):
        return self.c.Q[:, :, self.idx][:, :, :, self.idx]

    def slack(self, U: np.ndarray, P: np.ndarray) -> np.ndarray:
        Q = self._Q()
        g = np.real(np.einsum("ijab,ab->ij", Q, U))
        P = np.asarray(P, dtype=float)
        n = len(self.users)
        out = np.empty(n)
        for i in range(n):
            interf = sum(P[j] * g[i, j] for j in range(n) if j != i)
            out[i] = (P[i] * g[i, i] - self.gamma * (interf + self.sigma2)) / ((1 + self.gamma) * self.sigma2)
        return out

    def design_rows(self, prob, Pbar, P_U, U, margin):
        if not self.active:
            return
        g = np.real(np.einsum("ijab,ab->ij", self._Q(), U))
        n = len(self.users)
        norm = (1 + self.gamma) * self.sigma2
        for i in range(n):
            e = Pbar[i] * (P_U * g[i, i] / norm)
            for j in range(n):
                if j != i:
                    e = e - Pbar[j] * (self.gamma * P_U * g[i, j] / norm)
            prob.add_ge(e - self.gamma * self.sigma2 * (1 + margin) / norm)

    def surface_rows(self, prob, U: Expr, P, margin):
        if not self.active:
            return
        Q = self._Q()
        n = len(self.users)
        norm = (1 + self.gamma) * self.sigma2
        for i in range(n):
            coef = P[i] * Q[i, i]
            for j in range(n):
                if j != i:
                    coef = coef - self.gamma * P[j] * Q[i, j]
            coef = coef / norm
            s = max(1.0, np.abs(coef).max())
            prob.add_ge((inner(coef, U) - self.gamma * self.sigma2 * (1 + margin) / norm) / s)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _congruence(F: np.ndarray) -> np.ndarray:
    t = math.sqrt(max(np.trace(F[:2, :2]), 1e-300) / max(np.trace(F[2:, 2:]), 1e-300))
    return np.array([1.0, 1.0, t, t])


def _normalizer(F_ref: np.ndarray, coef: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Congruence vector and multiplier f0 so that the scaled CRB trace is about 1.

    With ``coef`` (leading axes 4 x 4) the congruence balances the coefficient
    magnitudes of the angle and gain blocks instead of the values at F_ref.
    """
    if coef is not None:
        mag = np.abs(coef).reshape(4, 4, -1).max(axis=-1)
        a, g = mag[:2, :2].max(), mag[2:, 2:].max()
        s = np.array([1.0, 1.0, 1.0, 1.0]) if a <= 0 or g <= 0 else np.array([1.0, 1.0, *([math.sqrt(a / g)] * 2)])
    else:
        s = _congruence(F_ref)
    crb = crb_trace_or_inf(F_ref)
    if math.isfinite(crb) and crb > 0:
        return s, crb
    Fs = F_ref * np.outer(s, s)
    tr = np.trace(Fs[:2, :2])
    return s, (1.0 / tr if tr > 0 else 1.0)


def _epigraph(prob: ConicProblem, F: list[list]) -> Expr:
    """Add the CRB LMI for a 4 x 4 grid of scalar expressions and return Tr(W)."""
    E = prob.symmetric("E", 2, psd=True)
    rows = []
    for h in range(4):
        row = []
        for v in range(4):
            e = F[h][v]
            if h < 2 and v < 2:
                e = e - E[h, v]
            row.append(e)
        rows.append(row)
    prob.add_lmi(bmat(rows))
    return trace_inverse_epigraph(prob, E)


def psd_project(X: np.ndarray) -> np.ndarray:
    X = 0.5 * (X + X.conj().T)
    w, V = np.linalg.eigh(X)
    return (V * np.maximum(w, 0.0)) @ V.conj().T


def leading_eig(U: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and unit eigenvector, first nonzero entry rotated to positive real."""
    w, V = np.linalg.eigh(0.5 * (U + U.conj().T))
    v = V[:, -1]
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size:
        v = v * np.exp(-1j * np.angle(v[nz[0]]))
    return float(w[-1]), v


def rank_one_gap(U: np.ndarray) -> float:
    w = np.linalg.eigvalsh(0.5 * (U + U.conj().T))
    return float(np.sum(w) - w[-1])


def extract_rank_one(U: np.ndarray) -> np.ndarray:
    lam, v = leading_eig(U)
    return math.sqrt(max(lam, 0.0)) * v


def embed_u(u_pe: np.ndarray, idx: np.ndarray, N: int) -> np.ndarray:
    u = np.zeros(N, dtype=complex)
    u[idx] = u_pe
    return u


# ---------------------------------------------------------------------------
# Combiner
# ---------------------------------------------------------------------------


def optimal_combiner(channels: ChannelSet, k: int, u: np.ndarray) -> np.ndarray:
    """Matched filter (h_k^H Theta G_r)^H / norm; maximises single-user SNR."""
    return matched_filter(channels, k, u)


# ---------------------------------------------------------------------------
# Waveform / power step
# ---------------------------------------------------------------------------


@dataclass
class WaveformResult:
    design: ProbingDesign
    crb: float
    status: str
    iterations: int


def solve_design_sdp(
    phase,
    config: SystemConfig,
    dmap: DesignAffineMap,
    qos,
    U_qos: np.ndarray,
    ref_design: ProbingDesign,
    tol: float = SOLVER_TOL,
    margin: float = 0.0,
    power_cap: bool = True,
) -> WaveformResult:
    phase = normalize_phase(phase)
    users = config.phase_users(phase)
    P_BS, P_U = config.P_BS_max, config.P_U_max
    F_ref = dmap.evaluate(ref_design.R_s, ref_design.P)
    if not np.any(F_ref[:2, :2]):
        # try the full-power isotropic point before declaring degeneracy
        F_ref = dmap.evaluate(P_BS / config.M_t * np.eye(config.M_t), np.full(len(users) if phase == 1 else 0, P_U))
    coef = np.concatenate([dmap.K_R.reshape(4, 4, -1) * P_BS, dmap.c_P * P_U], axis=-1)
    s, f0 = _normalizer(F_ref, coef)
    if not np.any(F_ref[:2, :2]) or np.trace(F_ref[2:, 2:]) <= 0:
        raise UnidentifiableError("FIM vanishes for every admissible design")

    prob = ConicProblem()
    Rbar = prob.hermitian("R", config.M_t)
    Pbar = [prob.scalar(f"P{i}", nonneg=True) for i in range(len(users))]
    prob.add_ge(1.0 - Rbar.trace().real)
    if power_cap:
        for Pk in Pbar:
            prob.add_ge(1.0 - Pk)
    sc = np.outer(s, s) * f0
    F = [[None] * 4 for _ in range(4)]
    for h in range(4):
        for v in range(4):
            e = inner(dmap.K_R[h, v] * (sc[h, v] * P_BS), Rbar)
            if phase == 1:
                for i, Pk in enumerate(Pbar):
                    e = e + Pk * float(dmap.c_P[h, v, i] * sc[h, v] * P_U)
            F[h][v] = e
    qos.design_rows(prob, Pbar, P_U, U_qos, margin)
    prob.minimize(_epigraph(prob, F))
    rep = solve_robust(prob, tol, "waveform/power subproblem")
    R_s = psd_project(rep["R"]) * P_BS
    tr = np.real(np.trace(R_s))
    if tr > P_BS:
        R_s *= P_BS / tr
    P = np.clip(np.array([rep[f"P{i}"] for i in range(len(users))], dtype=float) * P_U, 0.0, P_U if power_cap else np.inf)
    if phase == 2 and power_cap and isinstance(qos, ErgodicQos):
        # the transmitting users do not illuminate the target; full power only helps the QoS
        P = np.full(len(users), P_U)
    design = ProbingDesign(R_s, P)
    crb = crb_trace_or_inf(dmap.evaluate(R_s, P))
    return WaveformResult(design, crb, rep.status, rep.iterations)


def solve_waveform_power(
    phase,
    config: SystemConfig,
    channels: ChannelSet,
    partition: Partition,
    u: np.ndarray,
    ref_design: ProbingDesign | None = None,
    qos=None,
    tol: float = SOLVER_TOL,
    margin: float = QOS_MARGIN,
) -> WaveformResult:
    """Optimal (R_s, P) for a fixed surface under the ergodic QoS rows."""
    phase = normalize_phase(phase)
    idx = np.arange(partition.N1)
    if qos is None:
        qos = ErgodicQos(config, channels, phase, idx)
    U = np.outer(u[idx], u[idx].conj())
    if qos.active and np.any(qos.slack(U, np.full(len(qos.users), config.P_U_max)) < -1e-7):
        raise InfeasibleError(f"QoS infeasible at full user power (max sensors: {_corollary_hint(config, channels, phase)})")
    dmap = design_affine_map(phase, channels, partition, u, config)
    ref = ref_design or ProbingDesign.isotropic(config, phase)
    return solve_design_sdp(phase, config, dmap, qos, U, ref, tol=tol, margin=margin)


def _corollary_hint(config, channels, phase) -> str:
    try:
        return str(max_sensor_count(config, channels, config.phase_users(phase)[0]))
    except Exception as exc:  # noqa: BLE001 - diagnostic only
        return f"n/a ({exc})"


# ---------------------------------------------------------------------------
# Surface step (penalised SCA)
# ---------------------------------------------------------------------------


@dataclass
class SurfaceResult:
    u: np.ndarray  # length N (zeros on sensors)
    crb: float
    rounds: int
    rank_gap: float
    rho1: float
    status: str
    gaps: list = field(default_factory=list)


def solve_surface_sdp(umap: UAffineMap, qos, P: np.ndarray, U_prev: np.ndarray, rho1: float | None, s: np.ndarray, f0: float, tol: float, margin: float) -> tuple[np.ndarray, str]:
    n = U_prev.shape[0]
    prob = ConicProblem()
    U = prob.hermitian("U", n)
    for a in range(n):
        prob.add_ge(1.0 - U[a, a].real)
    sc = np.outer(s, s) * f0
    F = [[inner(umap.G[h, v] * sc[h, v], U) for v in range(4)] for h in range(4)]
    qos.surface_rows(prob, U, P, margin)
    obj = _epigraph(prob, F) * OBJ_SCALE
    if rho1 is None:  # plain relaxation
        prob.minimize(obj)
    else:
        _, ubar = leading_eig(U_prev)
        pen = inner(np.eye(n) - np.outer(ubar.conj(), ubar), U)
        prob.minimize(obj + pen * (1.0 / (2.0 * rho1)))
    rep = solve_robust(prob, tol, "surface subproblem")
    return 0.5 * (rep["U"] + rep["U"].conj().T), rep.status


def _randomized_candidates(U: np.ndarray, n_draws: int, seed: int = 0) -> list[np.ndarray]:
    """Principal eigenvector plus Gaussian draws from CN(0, U), unit-modulus projected."""
    w, V = np.linalg.eigh(0.5 * (U + U.conj().T))
    L = V * np.sqrt(np.maximum(w, 0.0))
    rng = np.random.default_rng(seed)
    Z = (rng.standard_normal((U.shape[0], n_draws)) + 1j * rng.standard_normal((U.shape[0], n_draws))) / math.sqrt(2.0)
    X = L @ Z
    out = [extract_rank_one(U)]
    for x in X.T:
        out.append(np.exp(1j * np.angle(x)))
    return out


def surface_sca(
    umap: UAffineMap,
    qos,
    P: np.ndarray,
    u0: np.ndarray,
    schedule: AoSchedule,
    F_ref: np.ndarray,
    margin: float = QOS_MARGIN,
    warm_start: bool = True,
) -> tuple[np.ndarray, list, float, int, str]:
    """Algorithm-1 style SCA on U restricted to ``umap.idx``; returns the extracted vector.

    With ``warm_start`` the relaxation (no rank penalty) is solved first.  If it is
    rank-one we are done; otherwise the penalty rounds are linearised at the best
    rank-one point among the current iterate, the principal eigenvector and a
    set of Gaussian randomisations.
    """
    s, f0 = _normalizer(F_ref, umap.G)
    U_prev = np.outer(u0, u0.conj())
    if warm_start:
        U_sdr, _ = solve_surface_sdp(umap, qos, P, U_prev, None, s, f0, schedule.solver_tol, margin)
        if rank_one_gap(U_sdr) < schedule.eps1:
            return extract_rank_one(U_sdr), [rank_one_gap(U_sdr)], schedule.rho1_0, 0, "rank_one"
        U_prev = U_sdr
    rho = schedule.rho1_0
    gaps = []
    status = "max_rounds"
    rnd = 0
    for rnd in range(1, schedule.max_sca + 1):
        try:
            U, st = solve_surface_sdp(umap, qos, P, U_prev, rho, s, f0, schedule.solver_tol, margin)
        except (SolverFailure, InfeasibleError) as exc:
            # heavy penalty weights can exhaust double precision; keep the last iterate
            status = "solver_stall"
            log.info("SCA round %d stopped: %s", rnd, exc)
            break
        gap = rank_one_gap(U)
        gaps.append(gap)
        U_prev = U
        rho = max(rho / schedule.c1, schedule.rho1_floor)
        if gap < schedule.eps1:
            status = "rank_one"
            break
        if len(gaps) > schedule.stagnation_rounds and min(gaps[-schedule.stagnation_rounds:]) >= min(gaps[: -schedule.stagnation_rounds]):
            status = "stagnated"
            log.warning("SCA stagnation: no penalty decrease over %d rounds", schedule.stagnation_rounds)
            break
    if not gaps:
        gaps.append(rank_one_gap(U_prev))
    return extract_rank_one(U_prev), gaps, rho, rnd, status


def best_rank_one_start(umap: UAffineMap, qos, P: np.ndarray, u0: np.ndarray, U_sdr: np.ndarray, n_draws: int) -> np.ndarray:
    """Best QoS-feasible rank-one point among u0 and randomisations of the relaxation."""
    best_u, best = u0, crb_trace_or_inf(umap.evaluate(np.outer(u0, u0.conj())))
    for cand in _randomized_candidates(U_sdr, n_draws):
        Uc = np.outer(cand, cand.conj())
        if qos.active and np.any(qos.slack(Uc, P) < 0):
            continue
        val = crb_trace_or_inf(umap.evaluate(Uc))
        if val < best:
            best_u, best = cand, val
    return best_u


def surface_step(umap: UAffineMap, qos, P: np.ndarray, u0: np.ndarray, schedule: AoSchedule) -> tuple[np.ndarray, list, float, int, str, float]:
    """SCA from the relaxation, falling back to a randomised rank-one start when that fails to improve.

    ``u0`` lives on ``umap.idx``.  Returns (u, gaps, rho1, rounds, status, crb).
    """
    F_ref = umap.evaluate(np.outer(u0, u0.conj()))
    crb0 = crb_trace_or_inf(F_ref)
    u_pe, gaps, rho, rounds, status = surface_sca(umap, qos, P, u0, schedule, F_ref)
    crb = crb_trace_or_inf(umap.evaluate(np.outer(u_pe, u_pe.conj())))
    U_pe = np.outer(u_pe, u_pe.conj())
    if not crb < crb0 or (qos.active and np.any(qos.slack(U_pe, P) < -1e-7)):
        # the relaxation's leading direction is poor: restart the rounds from the
        # best rank-one randomisation instead
        s, f0 = _normalizer(F_ref, umap.G)
        U_sdr, _ = solve_surface_sdp(umap, qos, P, np.outer(u0, u0.conj()), None, s, f0, schedule.solver_tol, QOS_MARGIN)
        start = best_rank_one_start(umap, qos, P, u0, U_sdr, schedule.n_randomizations)
        F0 = umap.evaluate(np.outer(start, start.conj()))
        u_b, gaps_b, rho_b, rounds_b, status_b = surface_sca(umap, qos, P, start, schedule, F0, warm_start=False)
        crb_b = crb_trace_or_inf(umap.evaluate(np.outer(u_b, u_b.conj())))
        if crb_b < crb:
            u_pe, gaps, rho, status, crb = u_b, gaps_b, rho_b, status_b, crb_b
        rounds += rounds_b
    return u_pe, gaps, rho, rounds, status, crb


def solve_surface_sca(
    phase,
    config: SystemConfig,
    channels: ChannelSet,
    partition: Partition,
    design: ProbingDesign,
    u0: np.ndarray,
    schedule: AoSchedule | None = None,
    qos=None,
) -> SurfaceResult:
    """Penalised SCA for the PE coefficients with (R_s, P) fixed."""
    schedule = schedule or AoSchedule()
    phase = normalize_phase(phase)
    idx = np.arange(partition.N1)
    R_x = probing_covariance(phase, channels, design, config)
    umap = u_affine_map(phase, channels, partition, R_x, config.T, config.sigma2)
    if qos is None:
        qos = ErgodicQos(config, channels, phase, idx)
    u_pe, gaps, rho, rounds, status, crb = surface_step(umap, qos, design.P, u0[idx], schedule)
    return SurfaceResult(embed_u(u_pe, idx, channels.N), crb, rounds, gaps[-1], rho, status, gaps)


# ---------------------------------------------------------------------------
# Communication-oriented surface (max-min of the QoS metric)
# ---------------------------------------------------------------------------


def max_min_surface(Qs: list[np.ndarray], weights: list[float], n: int, u0: np.ndarray, schedule: AoSchedule) -> np.ndarray:
    """Rank-one U maximising min_k w_k Re sum(Q_k o U) over diag(U) <= 1."""
    U_prev = np.outer(u0, u0.conj())
    rho = schedule.rho1_0
    for _ in range(schedule.max_sca):
        prob = ConicProblem()
        U = prob.hermitian("U", n)
        t = prob.scalar("t")
        for a in range(n):
            prob.add_ge(1.0 - U[a, a].real)
        for Q, w in zip(Qs, weights):
            prob.add_ge(inner(Q * w, U) - t)
        _, ubar = leading_eig(U_prev)
        pen = inner(np.eye(n) - np.outer(ubar.conj(), ubar), U)
        prob.minimize(t * -OBJ_SCALE + pen * (1.0 / (2.0 * rho)))
        rep = solve_robust(prob, schedule.solver_tol, "max-min surface")
        U_prev = 0.5 * (rep["U"] + rep["U"].conj().T)
        rho = max(rho / schedule.c1, schedule.rho1_floor)
        if rank_one_gap(U_prev) < schedule.eps1:
            break
    return extract_rank_one(U_prev)


def coc_surface(phase, config: SystemConfig, channels: ChannelSet, partition: Partition, schedule: AoSchedule | None = None) -> np.ndarray:
    """Communication-oriented coefficients: max-min ergodic SNR of the phase users."""
    schedule = schedule or AoSchedule()
    phase = normalize_phase(phase)
    idx = np.arange(partition.N1)
    users = config.phase_users(phase)
    if len(users) == 0:
        return embed_u(np.ones(partition.N1, dtype=complex), idx, channels.N)
    Qs = [ergodic_bracket_matrix(config, channels, k, idx) for k in users]
    u0 = _aligned_start(channels, users[0], idx)
    U0 = np.outer(u0, u0.conj())
    w = [1.0 / max(float(np.real(np.sum(Q * U0))), 1e-300) for Q in Qs]
    return embed_u(max_min_surface(Qs, w, len(idx), u0, schedule), idx, channels.N)


def _aligned_start(channels: ChannelSet, k: int, idx: np.ndarray) -> np.ndarray:
    g = channels.los_G_r[idx].sum(axis=1)
    return np.exp(1j * (np.angle(channels.los_h[idx, k]) - np.angle(g)))


# ---------------------------------------------------------------------------
# AO
# ---------------------------------------------------------------------------


@dataclass
class AoResult:
    phase: int
    partition: Partition
    design: ProbingDesign
    u: np.ndarray
    crb: float
    trajectory: list
    iterations: int
    converged: bool
    combiners: np.ndarray
    sca_rounds: list
    rank_gaps: list
    qos_slack: np.ndarray

    @property
    def root_crb_deg(self) -> float:
        return math.degrees(math.sqrt(self.crb)) if math.isfinite(self.crb) else math.inf


def crb_at(phase, config, channels, partition, design, u) -> float:
    R_x = probing_covariance(phase, channels, design, config)
    F = fim_extended(phase, channels, partition, SurfaceState(u), R_x, config.T, config.sigma2, check=False)
    return crb_trace_or_inf(F.full())


def _initial_surface(phase, config, channels, partition, qos, schedule) -> np.ndarray:
    idx = np.arange(partition.N1)
    u = embed_u(np.ones(partition.N1, dtype=complex), idx, channels.N)
    if not qos.active:
        return u
    P = np.full(len(qos.users), config.P_U_max)
    if np.all(qos.slack(np.outer(u[idx], u[idx].conj()), P) >= 0):
        return u
    # restoration: communication-oriented start
    u = coc_surface(phase, config, channels, partition, schedule)
    if np.any(qos.slack(np.outer(u[idx], u[idx].conj()), P) < 0):
        raise InfeasibleError("QoS infeasible even with communication-oriented coefficients")
    return u


def run_ao(
    phase,
    config: SystemConfig,
    channels: ChannelSet,
    partition: Partition,
    u_init: np.ndarray | None = None,
    schedule: AoSchedule | None = None,
) -> AoResult:
    """Alternate the waveform/power SDP and the surface SCA until the CRB settles."""
    schedule = schedule or AoSchedule()
    phase = normalize_phase(phase)
    idx = np.arange(partition.N1)
    users = config.phase_users(phase)
    qos = ErgodicQos(config, channels, phase, idx)
    u = u_init if u_init is not None else _initial_surface(phase, config, channels, partition, qos, schedule)
    design = ProbingDesign.isotropic(config, phase)
    g_prev = crb_at(phase, config, channels, partition, design, u)
    trajectory = [{"iter": 0, "crb_design": g_prev, "crb_surface": g_prev}]
    sca_rounds, gaps = [], []
    converged = False
    it = 0
    for it in range(1, schedule.max_ao + 1):
        # step 4: waveform and power
        wr = solve_waveform_power(phase, config, channels, partition, u, ref_design=design, qos=qos, tol=schedule.solver_tol)
        g_a = wr.crb
        U_cur = np.outer(u[idx], u[idx].conj())
        if g_a <= g_prev and np.all(qos.slack(U_cur, wr.design.P) >= -1e-7):
            design = wr.design
        else:
            g_a = g_prev
        # step 5: surface
        sr = solve_surface_sca(phase, config, channels, partition, design, u, schedule, qos)
        sca_rounds.append(sr.rounds)
        gaps.append(sr.rank_gap)
        U_new = np.outer(sr.u[idx], sr.u[idx].conj())
        g_b = sr.crb
        if g_b <= g_a and np.all(qos.slack(U_new, design.P) >= -1e-7):
            u = sr.u
        else:
            g_b = g_a
        trajectory.append({"iter": it, "crb_design": g_a, "crb_surface": g_b})
        done = abs(g_prev - g_b) <= schedule.eps2
        g_prev = g_b
        if done:
            converged = True
            break
    combiners = np.stack([optimal_combiner(channels, k, u) for k in users]) if len(users) else np.zeros((0, config.M_r))
    slack = qos.slack(np.outer(u[idx], u[idx].conj()), design.P) if len(users) else np.zeros(0)
    return AoResult(phase, partition, design, u, g_prev, trajectory, it, converged, combiners, sca_rounds, gaps, slack)


# ---------------------------------------------------------------------------
# Single-antenna closed forms
# ---------------------------------------------------------------------------


def closed_form_coefficients_Mr1(channels: ChannelSet, users: tuple[int, int] = (0, 1)) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Phase-aligned coefficients for M_r = 1: theta_n = angle(h_n) - angle(g_n), beta = 1."""
    if channels.los_G_r.shape[1] != 1:
        raise ValueError("closed form requires a single receive antenna")
    g = channels.los_G_r[:, 0]
    theta_r = np.angle(channels.los_h[:, users[0]]) - np.angle(g)
    theta_t = np.angle(channels.los_h[:, users[1]]) - np.angle(g)
    return theta_r, theta_t, np.ones(channels.N)


class NoFeasibleDeployment(ValueError):
    pass


def min_pe_count(config: SystemConfig, channels: ChannelSet | None = None, k: int = 0) -> int:
    """Smallest integer N1 meeting the QoS under phase-aligned coefficients (M_r = 1)."""
    if config.M_r != 1:
        raise ValueError("closed form requires a single receive antenna")
    gamma = gamma_target(config.R_qos)
    if gamma <= 0:
        return 0
    if channels is not None:
        L2 = (channels.pathloss_h[k] * channels.pathloss_r) ** 2
    else:
        L2 = (config.comm_pathloss(config.user_distances[k]) * config.comm_pathloss(config.bs_distance)) ** 2
    if config.P_U_max <= 0:
        raise NoFeasibleDeployment("no user power")
    kap = config.kappa
    c = gamma * config.sigma2 / (config.P_U_max * L2)
    rhs = c * (1 + kap) ** 2
    if kap == 0:
        x = rhs
    else:
        b = 2 * kap + 1
        # numerically stable positive root of kap^2 x^2 + b x - rhs = 0
        x = 2 * rhs / (b + math.sqrt(b * b + 4 * kap**2 * rhs))
    n1 = math.ceil(x - 1e-12 * max(1.0, x))
    if n1 > config.N:
        raise NoFeasibleDeployment(f"QoS needs {n1} PEs but only {config.N} elements exist")
    return n1


def max_sensor_count(config: SystemConfig, channels: ChannelSet | None = None, k: int = 0) -> int:
    """Largest number of sensors leaving enough PEs for the QoS of user ``k``."""
    return config.N - min_pe_count(config, channels, k)


def feasibility_max_sensors(config: SystemConfig, channels: ChannelSet, k: int, tol: float = 1e-9) -> int:
    """Brute-force oracle: scan N1 upwards, solving max bracket over the relaxed U set."""
    gamma = gamma_target(config.R_qos)
    need = gamma * config.sigma2
    if need <= 0:
        return config.N
    coef = config.P_U_max * ergodic_scale(config, channels, k) * config.sigma2
    for n1 in range(1, config.N + 1):
        idx = np.arange(n1)
        Q = ergodic_bracket_matrix(config, channels, k, idx)
        prob = ConicProblem()
        U = prob.hermitian("U", n1)
        for a in range(n1):
            prob.add_ge(1.0 - U[a, a].real)
        scale = np.abs(Q).max()
        prob.minimize(-inner(Q / scale, U))
        rep = prob.solve(tol=tol)
        best = -rep.objective * scale
        if coef * best >= need:
            return config.N - n1
    raise NoFeasibleDeployment("QoS cannot be met with all elements as PEs")
