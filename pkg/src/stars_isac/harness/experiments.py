"""Monte Carlo orchestration: one channel draw per (variant, sweep point, seed)."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..estimate import angle_error_deg, mle_spectrum, simulate_echo, simulate_frames
from ..fim import Partition, UnidentifiableError, root_crb_deg
from ..model import SystemConfig, synthesize_channels
from ..opt_ao import InfeasibleError, NoFeasibleDeployment, SolverFailure, feasibility_max_sensors, max_sensor_count, run_ao
from ..opt_pdl import exhaustive_search, run_pdl
from ..rate import ergodic_rate_approx, ergodic_rate_mc, instantaneous_rate
from .baselines import baseline_coc, baseline_cris_ao, baseline_cris_pdl, half_config, half_surface
from .config import PHASE_NAMES, ExperimentSpec, SpecError, apply_sweep
from .emit import ResultRecord
from .verify import run_checks

log = logging.getLogger(__name__)

MLE_TOL_DEG = 0.1


def _ergodic_rates(config: SystemConfig, channels, phase: int, u: np.ndarray, P, n1: int) -> tuple:
    idx = np.arange(n1)
    U = np.outer(u[idx], u[idx].conj())
    return tuple(ergodic_rate_approx(config, channels, k, U, float(Pk), idx) for k, Pk in zip(config.phase_users(phase), P))


def _base(ctx, algo, phase) -> ResultRecord:
    return ResultRecord(
        scenario=ctx["scenario"],
        variant=ctx["variant"],
        algo=algo,
        seed=ctx["seed"],
        sweep_name=ctx["sweep_name"] or "",
        sweep_value=None if ctx["sweep_value"] is None else float(ctx["sweep_value"]),
        phase=PHASE_NAMES.get(phase, ""),
    )


def _need_partition(config, N1) -> Partition:
    if N1 is None:
        raise SpecError("this algorithm needs partition.N1")
    return Partition(config.N, int(N1))


def _fill_crb(rec: ResultRecord, crb: float) -> None:
    rec.crb = float(crb)
    rec.root_crb_deg = root_crb_deg(crb) if math.isfinite(crb) else math.inf


def _ao_like(rec, res, config, channels, phase):
    _fill_crb(rec, res.crb)
    rec.N1, rec.N2 = res.partition.N1, res.partition.N2
    rec.iterations = res.iterations
    rec.rates = _ergodic_rates(config, channels, phase, res.u, res.design.P, res.partition.N1)
    rec.extra = {
        "converged": bool(res.converged),
        "max_rank_gap": float(max(res.rank_gaps, default=0.0)),
        "min_qos_slack": float(np.min(res.qos_slack)) if len(res.qos_slack) else math.inf,
        "trajectory_root_crb_deg": [root_crb_deg(t["crb_surface"]) for t in res.trajectory],
    }


def _pdl_like(rec, res, config, channels, phase):
    _fill_crb(rec, res.crb)
    rec.N1, rec.N2 = int(res.N1), channels.N - int(res.N1)
    rec.iterations = res.outer_rounds
    if len(config.phase_users(phase)):
        rec.rates = tuple(float(r) for r in instantaneous_rate(phase, channels, config, res.u, res.design.P, res.V).instantaneous)
    rec.extra = {
        "crb_relaxed": float(res.crb_relaxed),
        "min_qos_slack": float(np.min(res.qos_slack)) if len(res.qos_slack) else math.inf,
        "trajectory_root_crb_deg": [root_crb_deg(t["crb"]) if math.isfinite(t["crb"]) else math.inf for t in res.trajectory],
    }


def run_algorithm(algo: str, ctx: dict, config: SystemConfig, channels, N1, phases, options: dict) -> list[ResultRecord]:
    """All records of one algorithm on one channel draw."""
    out = []
    if algo == "verify":
        for c in run_checks(seed=ctx["seed"]):
            rec = _base(ctx, algo, 0)
            rec.status = "ok" if c.passed else "fail"
            rec.extra = {"check": c.name, "value": c.value, "tol": c.tol}
            out.append(rec)
        return out
    if algo == "rate":
        n1 = N1 if N1 is not None else config.N
        u = np.zeros(config.N, dtype=complex)
        u[:n1] = 1.0
        idx = np.arange(n1)
        draws = int(options.get("mc_draws", 10_000))
        for k in range(config.K):
            phase = 1 if k < config.K1 else 2
            rec = _base(ctx, algo, phase)
            rec.N1, rec.N2 = n1, config.N - n1
            approx = ergodic_rate_approx(config, channels, k, np.outer(u[idx], u[idx].conj()), config.P_U_max, idx)
            mc, half = ergodic_rate_mc(config, channels, k, u, config.P_U_max, n_draws=draws, seed=ctx["seed"])
            rec.rates = (approx,)
            rec.extra = {"user": k + 1, "approx": approx, "mc": mc, "mc_ci95": half, "rel_err": abs(approx - mc) / mc}
            out.append(rec)
        return out
    if algo == "sensors":
        for k in range(config.K):
            phase = 1 if k < config.K1 else 2
            rec = _base(ctx, algo, phase)
            try:
                analytic = max_sensor_count(config, channels, k)
                oracle = feasibility_max_sensors(config, channels, k)
            except NoFeasibleDeployment as exc:
                rec.status = f"infeasible: {exc}"
                out.append(rec)
                continue
            rec.N2, rec.N1 = analytic, config.N - analytic
            rec.extra = {"user": k + 1, "analytic": analytic, "oracle": oracle, "match": analytic == oracle}
            out.append(rec)
        return out
    for phase in phases:
        rec = _base(ctx, algo, phase)
        t0 = time.perf_counter()
        try:
            if algo == "ao":
                _ao_like(rec, run_ao(phase, config, channels, _need_partition(config, N1)), config, channels, phase)
            elif algo == "cris-ao":
                sub = half_surface(channels)
                res = baseline_cris_ao(phase, config, channels, _need_partition(config, N1))
                _ao_like(rec, res, half_config(config, sub), sub, phase)
            elif algo == "coc":
                part = _need_partition(config, N1)
                u, design, crb = baseline_coc(phase, channels, config, part)
                _fill_crb(rec, crb)
                rec.N1, rec.N2 = part.N1, part.N2
                rec.rates = _ergodic_rates(config, channels, phase, u, design.P, part.N1)
            elif algo == "pdl":
                _pdl_like(rec, run_pdl(phase, config, channels), config, channels, phase)
            elif algo == "cris-pdl":
                sub = half_surface(channels)
                _pdl_like(rec, baseline_cris_pdl(phase, config, channels), half_config(config, sub), sub, phase)
            elif algo == "exhaustive":
                res = exhaustive_search(phase, config, channels)
                _fill_crb(rec, res.crb)
                rec.N1, rec.N2 = int(res.N1), config.N - int(res.N1)
                rec.extra = {"crb_by_N1": {str(n): v for n, v in res.per_n.items()}}
                if not math.isfinite(res.crb):
                    rec.status = "infeasible: no identifiable feasible PE count"
            elif algo == "mle":
                rec = _mle_record(rec, config, channels, _need_partition(config, N1), phase, ctx["seed"], options)
            else:
                raise SpecError(f"unknown algorithm {algo!r}")
        except (InfeasibleError, NoFeasibleDeployment) as exc:
            rec.status = f"infeasible: {exc}"
        except (SolverFailure, UnidentifiableError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            rec.status = f"failed: {type(exc).__name__}: {exc}"
        rec.wall_time = time.perf_counter() - t0
        out.append(rec)
    return out


def _mle_record(rec, config, channels, part, phase, seed, options):
    res = run_ao(phase, config, channels, part)
    _fill_crb(rec, res.crb)
    rec.N1, rec.N2 = part.N1, part.N2
    rec.iterations = res.iterations
    X = simulate_frames(phase, channels, config, res.design, seed=seed)
    Y = simulate_echo(phase, channels, part, res.u, X, config.sigma2, seed=10_000 + seed)
    sp = mle_spectrum(Y, X, res.u, part, config.N_v, config.N_h, step_deg=float(options.get("grid_step_deg", 0.5)))
    truth = channels.target(phase)[0]
    err = angle_error_deg(sp.estimate, truth)
    rec.extra = {
        "est_azimuth_deg": sp.estimate[0],
        "est_elevation_deg": sp.estimate[1],
        "err_azimuth_deg": err[0],
        "err_elevation_deg": err[1],
        "within_tol": max(err) < MLE_TOL_DEG,
        "alpha_hat_abs": abs(sp.alpha_hat),
    }
    rec._spectrum = sp  # kept in-process for spectrum export, never serialised
    return rec


def _tasks(spec: ExperimentSpec):
    for vi, var in enumerate(spec.variants):
        algos = var.algorithms or spec.algorithms
        for value in spec.sweep_values:
            for seed in spec.seeds:
                yield vi, value, seed, algos


def _run_task(args) -> list[ResultRecord]:
    spec, vi, value, seed, algos = args
    var = spec.variants[vi]
    ctx = {"scenario": spec.scenario, "variant": var.label, "seed": int(seed), "sweep_name": spec.sweep_name, "sweep_value": value}
    config, N1 = apply_sweep(var.config, var.raw, spec.sweep_name, value, var.N1)
    channels = synthesize_channels(config, int(seed))
    out = []
    for algo in algos:
        t0 = time.perf_counter()
        try:
            recs = run_algorithm(algo, ctx, config, channels, N1, spec.phases, spec.options)
        except SpecError:
            raise
        except Exception as exc:  # per-seed failures are recorded, not fatal
            log.exception("seed %s %s failed", seed, algo)
            rec = _base(ctx, algo, 0)
            rec.status = f"failed: {type(exc).__name__}: {exc}"
            recs = [rec]
        dt = time.perf_counter() - t0
        for r in recs:
            if math.isnan(r.wall_time):
                r.wall_time = dt / len(recs)
        out.extend(recs)
    return out


def run_experiment(spec: ExperimentSpec, workers: int = 1):
    """Yield records in a fixed order (variant, sweep value, seed, algorithm, phase).

    The order, and therefore the emitted bytes, do not depend on ``workers``.
    """
    tasks = [(spec, *t) for t in _tasks(spec)]
    if workers <= 1:
        for t in tasks:
            yield from _run_task(t)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for recs in pool.map(_run_task, tasks):
            yield from recs
