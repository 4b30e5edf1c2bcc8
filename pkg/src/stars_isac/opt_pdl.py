"""Joint beamforming and sensor-count optimisation: penalty-based double loop (PDL).

The partition enters through weights ``p`` on the N-1 candidate PE counts;
``p`` is pushed to a vertex of the simplex by the penalty sum(p - p^2)
whose weight 1/(2 rho2) grows over the outer rounds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProblem, inner
from .fim import (
    Partition,
    ProbingDesign,
    SurfaceState,
    UnidentifiableError,
    crb_trace_or_inf,
    design_affine_map,
    fim_extended,
    probing_covariance,
    weight_affine_map,
    weighted_u_affine_map,
)
from .model import ChannelSet, SystemConfig, normalize_phase
from .opt_ao import (
    OBJ_SCALE,
    QOS_MARGIN,
    AoSchedule,
    InfeasibleError,
    InstantQos,
    SolverFailure,
    _epigraph,
    _normalizer,
    extract_rank_one,
    leading_eig,
    max_min_surface,
    optimal_combiner,
    rank_one_gap,
    solve_design_sdp,
    solve_robust,
    surface_step,
)
from .rate import combiner_gain_matrices, ergodic_bracket_matrix, gamma_target, qos_coefficients, _selection_weights

log = logging.getLogger(__name__)


@dataclass
class PdlSchedule:
    rho2_0: float = 1e3
    c2: float = 5.0
    rho_th: float = 1e-4  # inner exit on the CRB trace change
    eps2: float = 1e-6  # outer exit on sum(p - p^2)
    eps3: float = 1e-5  # weight SCA exit
    eps_v: float = 1e-6  # combiner rank-one exit
    max_outer: int = 40
    max_inner: int = 15
    max_weight_sca: int = 30
    tie_tol: float = 1e-9
    surface: AoSchedule = field(default_factory=AoSchedule)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def one_hot(N: int, n1: int) -> np.ndarray:
    p = np.zeros(N - 1)
    p[n1 - 1] = 1.0
    return p


def penalty_value(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    return float(np.sum(p - p * p))


def round_weights(p: np.ndarray, tie_tol: float = 1e-9) -> list[int]:
    """Candidate PE counts ordered by descending weight; near-ties favour fewer PEs."""
    p = np.asarray(p, dtype=float)
    order = sorted(range(p.size), key=lambda i: (-round(p[i] / tie_tol) if tie_tol > 0 else -p[i], i))
    return [i + 1 for i in order]


def weighted_crb(phase, config: SystemConfig, channels: ChannelSet, design: ProbingDesign, u: np.ndarray, p: np.ndarray) -> float:
    R_x = probing_covariance(phase, channels, design, config)
    wmap = weight_affine_map(phase, channels, SurfaceState(u), R_x, config.T, config.sigma2)
    return crb_trace_or_inf(wmap.evaluate(p))


def _instant_qos(phase, channels, config, V, p) -> InstantQos:
    coeffs = qos_coefficients(phase, channels, config, V, p=p)
    return InstantQos(coeffs, np.arange(channels.N))


def qos_slack(phase, config, channels, u, P, V, p) -> np.ndarray:
    if len(config.phase_users(phase)) == 0:
        return np.zeros(0)
    q = _instant_qos(phase, channels, config, V, p)
    return q.slack(np.outer(u, u.conj()), P)


# ---------------------------------------------------------------------------
# Combiners
# ---------------------------------------------------------------------------


@dataclass
class CombinerResult:
    V: np.ndarray  # (K_phase, M_r) unit vectors
    margins: np.ndarray
    gaps: np.ndarray
    rounds: np.ndarray


def _combiner_sdp(Psi: np.ndarray, rhs: float, norm: float, tol: float, rho: float | None, V_prev: np.ndarray | None):
    M = Psi.shape[0]
    prob = ConicProblem()
    V = prob.hermitian("V", M)
    prob.add_eq(V.trace().real - 1.0)
    if rho is None:
        t = prob.scalar("t")
        prob.add_ge(inner(Psi / norm, V) - rhs / norm - t)
        prob.add_ge(t + 1.0)  # bounded below so the problem stays well posed
        prob.minimize(t * -1.0)
    else:
        prob.add_ge(inner(Psi / norm, V) - rhs / norm)
        _, vbar = leading_eig(V_prev)
        prob.minimize(inner(np.eye(M) - np.outer(vbar.conj(), vbar), V) * (1.0 / (2.0 * rho)))
    rep = solve_robust(prob, tol, "combiner subproblem")
    Vv = 0.5 * (rep["V"] + rep["V"].conj().T)
    return Vv, (rep["t"] if rho is None else None)


def solve_combiners(phase, config: SystemConfig, channels: ChannelSet, u: np.ndarray, P: np.ndarray, p: np.ndarray, schedule: PdlSchedule | None = None) -> CombinerResult:
    """Rank-one combiners meeting the SINR rows for fixed (P, U, p).

    Each user's row involves only its own combiner, so the users decouple.
    The relaxation is solved for the largest normalised margin; rank-one
    penalty rounds follow only when that optimum is not already rank-one.
    """
    schedule = schedule or PdlSchedule()
    phase = normalize_phase(phase)
    users = config.phase_users(phase)
    gamma = gamma_target(config.R_qos)
    K = len(users)
    if K == 0:
        return CombinerResult(np.zeros((0, config.M_r), complex), np.zeros(0), np.zeros(0), np.zeros(0, int))
    Phi = combiner_gain_matrices(channels, config, phase, u, p=p)
    P = np.asarray(P, dtype=float)
    V_out = np.zeros((K, config.M_r), dtype=complex)
    margins, gaps, rounds = np.zeros(K), np.zeros(K), np.zeros(K, int)
    sig = config.sigma2
    norm = (1.0 + gamma) * sig
    for i in range(K):
        Psi = P[i] * Phi[i]
        for j in range(K):
            if j != i:
                Psi = Psi - gamma * P[j] * Phi[j]
        if gamma <= 0 or config.M_r == 1:
            # QoS inactive or scalar combiner: any unit vector aligned with the user is optimal
            w, Vec = np.linalg.eigh(np.conj(Psi) if config.M_r > 1 else np.ones((1, 1)))
            v = Vec[:, -1]
            nz = np.flatnonzero(np.abs(v) > 1e-12)
            v = v * np.exp(-1j * np.angle(v[nz[0]]))
            V_out[i] = v
            margins[i] = (float(np.real(v.conj() @ np.conj(Psi) @ v)) - gamma * sig) / norm
            continue
        Vr, t = _combiner_sdp(Psi, gamma * sig * (1.0 + QOS_MARGIN), norm, schedule.surface.solver_tol, None, None)
        if t < -1e-9:
            raise InfeasibleError(f"QoS infeasible at current (P, U, p) for user {users[i]}")
        gap = rank_one_gap(Vr)
        rho = schedule.surface.rho1_0
        n = 0
        while gap >= schedule.eps_v and n < schedule.surface.max_sca:
            n += 1
            Vr, _ = _combiner_sdp(Psi, gamma * sig * (1.0 + QOS_MARGIN), norm, schedule.surface.solver_tol, rho, Vr)
            gap = rank_one_gap(Vr)
            rho = max(rho / schedule.surface.c1, schedule.surface.rho1_floor)
        v = extract_rank_one(Vr)
        v = v / np.linalg.norm(v)
        V_out[i] = v
        gaps[i], rounds[i] = gap, n
        margins[i] = (float(np.real(v.conj() @ np.conj(Psi) @ v)) - gamma * sig) / norm
    return CombinerResult(V_out, margins, gaps, rounds)


# ---------------------------------------------------------------------------
# Waveform / power and surface with weights
# ---------------------------------------------------------------------------


def solve_waveform_power_mu(phase, config: SystemConfig, channels: ChannelSet, u: np.ndarray, V: np.ndarray, p: np.ndarray, ref_design: ProbingDesign | None = None, tol: float | None = None):
    """Optimal (R_s, P) under the instantaneous SINR rows."""
    phase = normalize_phase(phase)
    tol = tol or AoSchedule().solver_tol
    dmap = design_affine_map(phase, channels, None, u, config, p=p)
    qos = _instant_qos(phase, channels, config, V, p) if len(config.phase_users(phase)) else _NoQos()
    U = np.outer(u, u.conj())
    ref = ref_design or ProbingDesign.isotropic(config, phase)
    try:
        return solve_design_sdp(phase, config, dmap, qos, U, ref, tol=tol, margin=QOS_MARGIN)
    except InfeasibleError:
        return solve_design_sdp(phase, config, dmap, qos, U, ref, tol=tol, margin=0.0)


class _NoQos:
    active = False
    users = np.zeros(0, int)

    def design_rows(self, *a, **k):
        pass

    def surface_rows(self, *a, **k):
        pass

    def slack(self, U, P):
        return np.zeros(0)


def solve_surface_mu(phase, config: SystemConfig, channels: ChannelSet, design: ProbingDesign, V: np.ndarray, p: np.ndarray, u0: np.ndarray, schedule: AoSchedule | None = None):
    """Surface step on the full N x N coefficient matrix with the p-weighted FIM and SINR rows."""
    schedule = schedule or AoSchedule()
    phase = normalize_phase(phase)
    R_x = probing_covariance(phase, channels, design, config)
    umap = weighted_u_affine_map(phase, channels, p, R_x, config.T, config.sigma2)
    qos = _instant_qos(phase, channels, config, V, p) if len(config.phase_users(phase)) else _NoQos()
    return surface_step(umap, qos, design.P, u0, schedule)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


@dataclass
class WeightResult:
    p: np.ndarray
    crb: float
    objective: float
    rounds: int
    trajectory: list


def _weight_qos_rows(phase, config, channels, u, P, V) -> np.ndarray | None:
    """Rows r (K, N-1) with slack_k(p) = r_k @ p - gamma sigma2 / norm."""
    users = config.phase_users(phase)
    gamma = gamma_target(config.R_qos)
    if len(users) == 0 or gamma <= 0:
        return None
    N = channels.N
    norm = (1.0 + gamma) * config.sigma2
    rows = np.zeros((len(users), N - 1))
    for i in range(len(users)):
        for j, kj in enumerate(users):
            terms = channels.h[:, kj].conj() * u * (channels.G_r @ V[i])
            g = np.abs(np.cumsum(terms)[: N - 1]) ** 2  # g[n-1]: first n elements are PEs
            coef = P[i] if i == j else -gamma * P[j]
            rows[i] += coef * g / norm
    return rows


def solve_weights(phase, config: SystemConfig, channels: ChannelSet, design: ProbingDesign, u: np.ndarray, V: np.ndarray, rho2: float, p0: np.ndarray, schedule: PdlSchedule | None = None, crb_scale: float | None = None) -> WeightResult:
    """SCA on the simplex weights with the penalty linearised at the previous iterate.

    ``crb_scale`` fixes the CRB value mapped to OBJ_SCALE in the objective
    (default: the CRB at ``p0``), which sets the meaning of ``rho2``.
    """
    schedule = schedule or PdlSchedule()
    phase = normalize_phase(phase)
    gamma = gamma_target(config.R_qos)
    R_x = probing_covariance(phase, channels, design, config)
    wmap = weight_affine_map(phase, channels, SurfaceState(u), R_x, config.T, config.sigma2)
    rows = _weight_qos_rows(phase, config, channels, u, np.asarray(design.P, float), V)
    Nm1 = channels.N - 1
    p_prev = np.asarray(p0, dtype=float).copy()
    crb_prev = crb_trace_or_inf(wmap.evaluate(p_prev))
    F_ref = wmap.evaluate(p_prev)
    s, f0 = _normalizer(F_ref, np.moveaxis(wmap.F_n, 0, -1))
    if crb_scale is not None:
        f0 = crb_scale
    if not math.isfinite(f0) or f0 <= 0:
        f0 = 1.0
    sc = np.outer(s, s) * f0
    traj = [crb_prev]
    obj_val = np.inf
    rounds = 0
    for rounds in range(1, schedule.max_weight_sca + 1):
        prob = ConicProblem()
        pv = [prob.scalar(f"p{n}", nonneg=True) for n in range(Nm1)]
        total = pv[0]
        for q in pv[1:]:
            total = total + q
        prob.add_eq(total - 1.0)
        F = [[None] * 4 for _ in range(4)]
        for h in range(4):
            for v in range(4):
                e = pv[0] * float(wmap.F_n[0, h, v] * sc[h, v])
                for n in range(1, Nm1):
                    e = e + pv[n] * float(wmap.F_n[n, h, v] * sc[h, v])
                F[h][v] = e
        if rows is not None:
            rhs = gamma * config.sigma2 / ((1.0 + gamma) * config.sigma2)
            for r in rows:
                scale = max(1.0, np.abs(r).max())
                e = pv[0] * float(r[0] / scale)
                for n in range(1, Nm1):
                    e = e + pv[n] * float(r[n] / scale)
                prob.add_ge(e - rhs / scale)
        obj = _epigraph(prob, F) * OBJ_SCALE
        lin = 1.0 - 2.0 * p_prev  # gradient of p - p^2 at p_prev
        pen = pv[0] * float(lin[0])
        for n in range(1, Nm1):
            pen = pen + pv[n] * float(lin[n])
        prob.minimize(obj + pen * (1.0 / (2.0 * rho2)))
        rep = solve_robust(prob, schedule.surface.solver_tol, "weight subproblem")
        p_new = np.clip(np.array([rep[f"p{n}"] for n in range(Nm1)], dtype=float), 0.0, None)
        p_new /= p_new.sum()
        crb_new = crb_trace_or_inf(wmap.evaluate(p_new))
        traj.append(crb_new)
        done = abs(crb_new - crb_prev) <= schedule.eps3 and np.abs(p_new - p_prev).max() <= 1e-6
        p_prev, crb_prev = p_new, crb_new
        obj_val = al_objective(crb_new, p_new, rho2, f0)
        if done:
            break
    return WeightResult(p_prev, crb_prev, obj_val, rounds, traj)


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


@dataclass
class PdlResult:
    phase: int
    N1: int
    p: np.ndarray
    design: ProbingDesign
    u: np.ndarray
    V: np.ndarray
    crb: float
    crb_relaxed: float
    trajectory: list
    outer_rounds: int
    penalties: list
    qos_slack: np.ndarray
    rank_gaps: list

    @property
    def root_crb_deg(self) -> float:
        return math.degrees(math.sqrt(self.crb)) if math.isfinite(self.crb) else math.inf


def al_objective(crb: float, p: np.ndarray, rho2: float, f0: float) -> float:
    """AL value in the normalised units the subproblems use."""
    return OBJ_SCALE * crb / f0 + penalty_value(p) / (2.0 * rho2)


def _restore_surface(phase, config, channels, p, schedule) -> np.ndarray:
    """Max-min ergodic bracket over the p-weighted element set, used when the start is infeasible."""
    users = config.phase_users(phase)
    N = channels.N
    W = _selection_weights(N, None, p)
    Qs = [ergodic_bracket_matrix(config, channels, k) * W for k in users]
    u0 = np.ones(N, dtype=complex)
    U0 = np.outer(u0, u0.conj())
    w = [1.0 / max(float(np.real(np.sum(Q * U0))), 1e-300) for Q in Qs]
    return max_min_surface(Qs, w, N, u0, schedule.surface)


def _inner_pass(phase, config, channels, state, p, rho2, schedule, f0, update_weights: bool):
    """One pass of steps 4-7; blocks are accepted only when the AL value does not increase."""
    design, u, V = state["design"], state["u"], state["V"]
    cur = weighted_crb(phase, config, channels, design, u, p)
    cur_al = al_objective(cur, p, rho2, f0)
    gaps = []
    # step 4: combiners
    try:
        cr = solve_combiners(phase, config, channels, u, design.P, p, schedule)
        V = cr.V
        gaps.extend(cr.gaps.tolist())
    except InfeasibleError:
        if V is None:
            raise
    # step 5: waveform and power
    try:
        wr = solve_waveform_power_mu(phase, config, channels, u, V, p, ref_design=design, tol=schedule.surface.solver_tol)
        slack = qos_slack(phase, config, channels, u, wr.design.P, V, p)
        val = al_objective(wr.crb, p, rho2, f0)
        if val <= cur_al * (1 + 1e-12) and np.all(slack >= -1e-7):
            design, cur, cur_al = wr.design, wr.crb, val
    except (InfeasibleError, SolverFailure, UnidentifiableError) as exc:
        log.info("waveform step skipped: %s", exc)
    # step 6: surface
    try:
        u_new, g, _, _, _, crb_u = surface_step_mu(phase, config, channels, design, V, p, u, schedule.surface)
        slack = qos_slack(phase, config, channels, u_new, design.P, V, p)
        val = al_objective(crb_u, p, rho2, f0)
        if val <= cur_al * (1 + 1e-12) and np.all(slack >= -1e-7):
            u, cur, cur_al = u_new, crb_u, val
            gaps.append(g[-1])
    except (InfeasibleError, SolverFailure) as exc:
        log.info("surface step skipped: %s", exc)
    # step 7: weights
    if update_weights:
        try:
            wres = solve_weights(phase, config, channels, design, u, V, rho2, p, schedule, crb_scale=f0)
            slack = qos_slack(phase, config, channels, u, design.P, V, wres.p)
            val = al_objective(wres.crb, wres.p, rho2, f0)
            if val <= cur_al * (1 + 1e-12) and np.all(slack >= -1e-7):
                p, cur, cur_al = wres.p, wres.crb, val
        except (InfeasibleError, SolverFailure) as exc:
            log.info("weight step skipped: %s", exc)
    state.update(design=design, u=u, V=V)
    return p, cur, cur_al, gaps


def surface_step_mu(phase, config, channels, design, V, p, u, schedule):
    return solve_surface_mu(phase, config, channels, design, V, p, u, schedule)


def _initial_state(phase, config, channels, p, schedule):
    users = config.phase_users(phase)
    design = ProbingDesign.isotropic(config, phase)
    u = np.ones(channels.N, dtype=complex)
    if len(users) == 0:
        return {"design": design, "u": u, "V": np.zeros((0, config.M_r), complex)}
    try:
        V = solve_combiners(phase, config, channels, u, design.P, p, schedule).V
    except InfeasibleError:
        u = _restore_surface(phase, config, channels, p, schedule)
        V = solve_combiners(phase, config, channels, u, design.P, p, schedule).V
    return {"design": design, "u": u, "V": V}


def fixed_partition_mu(phase, config: SystemConfig, channels: ChannelSet, n1: int, schedule: PdlSchedule | None = None, state: dict | None = None):
    """Multi-user AO at a fixed partition (one-hot p): combiners, waveform/power, surface."""
    schedule = schedule or PdlSchedule()
    phase = normalize_phase(phase)
    p = one_hot(channels.N, n1)
    state = dict(state) if state is not None else _initial_state(phase, config, channels, p, schedule)
    f0 = weighted_crb(phase, config, channels, state["design"], state["u"], p)
    if not math.isfinite(f0):
        f0 = 1.0
    traj = [f0]
    gaps = []
    for _ in range(schedule.max_inner):
        _, cur, _, g = _inner_pass(phase, config, channels, state, p, 1.0, schedule, f0, update_weights=False)
        gaps.extend(g)
        traj.append(cur)
        if abs(traj[-2] - traj[-1]) <= schedule.rho_th:
            break
    slack = qos_slack(phase, config, channels, state["u"], state["design"].P, state["V"], p)
    return state, traj[-1], traj, slack, gaps


def run_pdl(phase, config: SystemConfig, channels: ChannelSet, schedule: PdlSchedule | None = None, p_init: np.ndarray | None = None) -> PdlResult:
    """Algorithm-4 style double loop followed by rounding to an integer PE count."""
    schedule = schedule or PdlSchedule()
    phase = normalize_phase(phase)
    N = channels.N
    if N < 2:
        raise ValueError("need at least two elements")
    p = np.full(N - 1, 1.0 / (N - 1)) if p_init is None else np.asarray(p_init, dtype=float)
    state = _initial_state(phase, config, channels, p, schedule)
    f0 = weighted_crb(phase, config, channels, state["design"], state["u"], p)
    if not math.isfinite(f0):
        f0 = 1.0
    rho2 = schedule.rho2_0
    trajectory = [{"outer": 0, "inner": 0, "crb": f0, "al": al_objective(f0, p, rho2, f0), "penalty": penalty_value(p), "rho2": rho2}]
    penalties = [penalty_value(p)]
    gaps: list = []
    l = 0
    for l in range(1, schedule.max_outer + 1):
        prev = trajectory[-1]["crb"]
        for m in range(1, schedule.max_inner + 1):
            p, cur, al, g = _inner_pass(phase, config, channels, state, p, rho2, schedule, f0, update_weights=True)
            gaps.extend(g)
            trajectory.append({"outer": l, "inner": m, "crb": cur, "al": al, "penalty": penalty_value(p), "rho2": rho2})
            if abs(cur - prev) <= schedule.rho_th:
                break
            prev = cur
        penalties.append(penalty_value(p))
        if penalties[-1] < schedule.eps2:
            break
        rho2 /= schedule.c2
    crb_relaxed = trajectory[-1]["crb"]
    # rounding and one re-solve at the vertex
    last_err = None
    for n1 in round_weights(p, schedule.tie_tol):
        try:
            res = _resolve_vertex(phase, config, channels, n1, state, schedule)
        except (InfeasibleError, SolverFailure, UnidentifiableError) as exc:
            last_err = exc
            continue
        design, u, V, crb, slack = res
        return PdlResult(phase, n1, p, design, u, V, crb, crb_relaxed, trajectory, l, penalties, slack, gaps)
    raise InfeasibleError(f"no feasible vertex after rounding: {last_err}")


def _resolve_vertex(phase, config, channels, n1, state, schedule):
    N = channels.N
    p = one_hot(N, n1)
    u, V, design = state["u"].copy(), state["V"], state["design"]
    if len(config.phase_users(phase)):
        V = solve_combiners(phase, config, channels, u, design.P, p, schedule).V
    wr = solve_waveform_power_mu(phase, config, channels, u, V, p, ref_design=design, tol=schedule.surface.solver_tol)
    design = wr.design
    crb = weighted_crb(phase, config, channels, design, u, p)
    try:
        u_new, *_ , crb_u = solve_surface_mu(phase, config, channels, design, V, p, u, schedule.surface)
        slack_new = qos_slack(phase, config, channels, u_new, design.P, V, p)
        if crb_u <= crb and np.all(slack_new >= -1e-7):
            u, crb = u_new, crb_u
    except (InfeasibleError, SolverFailure) as exc:
        log.info("vertex surface re-solve skipped: %s", exc)
    slack = qos_slack(phase, config, channels, u, design.P, V, p)
    if np.any(slack < -1e-7):
        raise InfeasibleError(f"QoS violated at N1={n1}")
    if not math.isfinite(crb):
        raise UnidentifiableError(f"unidentifiable at N1={n1}")
    # the p-map at a vertex must agree with the fixed-partition FIM
    R_x = probing_covariance(phase, channels, design, config)
    F_fixed = fim_extended(phase, channels, Partition(N, n1), SurfaceState(u), R_x, config.T, config.sigma2, check=False).full()
    crb_fixed = crb_trace_or_inf(F_fixed)
    if abs(crb_fixed - crb) > 1e-9 * max(1.0, abs(crb)):
        log.warning("vertex CRB mismatch: %g vs %g", crb, crb_fixed)
    return design, u, V, crb_fixed, slack


@dataclass
class ExhaustiveResult:
    N1: int
    crb: float
    per_n: dict
    states: dict

    @property
    def root_crb_deg(self) -> float:
        return math.degrees(math.sqrt(self.crb)) if math.isfinite(self.crb) else math.inf


def exhaustive_search(phase, config: SystemConfig, channels: ChannelSet, schedule: PdlSchedule | None = None, candidates=None) -> ExhaustiveResult:
    """Fixed-partition optimisation at every PE count; returns the best."""
    schedule = schedule or PdlSchedule()
    phase = normalize_phase(phase)
    N = channels.N
    per_n, states = {}, {}
    for n1 in candidates or range(1, N):
        try:
            state, crb, _, slack, _ = fixed_partition_mu(phase, config, channels, n1, schedule)
            if np.any(slack < -1e-7):
                crb = math.inf
        except (InfeasibleError, SolverFailure, UnidentifiableError) as exc:
            log.info("N1=%d skipped: %s", n1, exc)
            state, crb = None, math.inf
        per_n[n1] = crb
        states[n1] = state
    best = min(per_n, key=lambda n: (per_n[n], n))
    return ExhaustiveResult(best, per_n[best], per_n, states)
