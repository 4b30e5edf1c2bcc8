"""The ten acceptance criteria, each at its stated tolerance and time budget.

Every test reports one PASS/FAIL line (collected in the terminal summary)
before asserting.  Expensive optimisation runs are cached so criterion 6
reuses the AO and PDL results of criteria 5 and 7.
"""

import functools
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from acceptance_log import report
from stars_isac.estimate import angle_error_deg, mle_spectrum, simulate_echo, simulate_frames
from stars_isac.fim import Partition
from stars_isac.harness.config import load_spec
from stars_isac.harness.emit import summarize
from stars_isac.harness.experiments import run_experiment
from stars_isac.harness.verify import check_fim_oracle, check_partition_equivalence, random_kkt_sdp
from stars_isac.model import SystemConfig, dbm_to_watt, make_rng, synthesize_channels
from stars_isac.opt_ao import feasibility_max_sensors, max_sensor_count, run_ao
from stars_isac.opt_pdl import exhaustive_search, run_pdl
from stars_isac.rate import ergodic_rate_approx, ergodic_rate_mc

pytestmark = pytest.mark.acceptance


def _finish(number, title, passed, detail, elapsed, budget):
    in_time = elapsed < budget
    report(number, title, passed and in_time, f"{detail}; {elapsed:.1f}s (budget {budget:.0f}s)")
    assert in_time, f"took {elapsed:.1f}s, budget {budget}s"
    assert passed, detail


# ---------------------------------------------------------------------------
# 1, 2: FIM
# ---------------------------------------------------------------------------


def test_c01_fim_oracle():
    t0 = time.perf_counter()
    res = check_fim_oracle(n_instances=60, seed=11)
    _finish(1, "analytic FIM vs finite-difference oracle", res.passed, f"max rel dev {res.value:.2e} over 60 instances (tol 1e-5)", time.perf_counter() - t0, 60)


def test_c02_partition_equivalence():
    t0 = time.perf_counter()
    res = check_partition_equivalence(n_instances=10, N=10, seed=12)
    _finish(2, "extended vs fixed-partition FIM", res.passed, f"max rel dev {res.value:.2e} over all partitions of 10 instances, N=10 (tol 1e-9)", time.perf_counter() - t0, 10)


# ---------------------------------------------------------------------------
# 3, 4: rate approximation and sensor count
# ---------------------------------------------------------------------------


def test_c03_lemma1_accuracy():
    # identity coefficients (u = 1 on the PEs); curves are averages over user placements
    t0 = time.perf_counter()
    worst, curves = 0.0, {}
    for kappa in (1.0, 5.0, 10.0):
        cfg = SystemConfig(M_t=16, M_r=8, K=2, K1=1, N=20, N_v=5, kappa=kappa, P_U_max=float(dbm_to_watt(15.0)), user_distances=(20.0, 10.0))
        for n1 in (10, 20):
            u = np.zeros(cfg.N, dtype=complex)
            u[:n1] = 1.0
            idx = np.arange(n1)
            for seed in range(10):
                ch = synthesize_channels(cfg, seed)
                for k in range(2):
                    approx = ergodic_rate_approx(cfg, ch, k, np.ones((n1, n1)), cfg.P_U_max, idx)
                    mc, _ = ergodic_rate_mc(cfg, ch, k, u, cfg.P_U_max, n_draws=10_000, seed=seed)
                    worst = max(worst, abs(approx - mc) / mc)
                    curves.setdefault((kappa, n1, k), []).append(mc)
    order_ok = all(np.mean(curves[(a, n, 1)]) > np.mean(curves[(a, n, 0)]) for a, n, k in curves if k == 0)
    detail = f"max rel err {worst:.3%} over 120 instances (tol 5%), U2 curve above U1 at every (kappa, N1): {order_ok}"
    _finish(3, "ergodic-rate approximation", worst < 0.05 and order_ok, detail, time.perf_counter() - t0, 120)


def test_c04_corollary_exactness():
    t0 = time.perf_counter()
    mismatches, total = [], 0
    for seed in range(3):
        for R in (1.0, 2.0):
            for p_dbm in (5, 10, 15, 20, 25, 30):
                cfg = SystemConfig(M_t=4, M_r=1, K=2, K1=1, N=20, N_v=5, R_qos=R, P_U_max=float(dbm_to_watt(p_dbm)), P_BS_max=float(dbm_to_watt(15.0)))
                ch = synthesize_channels(cfg, seed)
                for k in range(2):
                    total += 1
                    a, o = max_sensor_count(cfg, ch, k), feasibility_max_sensors(cfg, ch, k)
                    if a != o:
                        mismatches.append((seed, R, p_dbm, k, a, o))
    _finish(4, "closed-form maximum sensor count", not mismatches, f"{total - len(mismatches)}/{total} exact matches {mismatches[:3]}", time.perf_counter() - t0, 120)


# ---------------------------------------------------------------------------
# 5: AO
# ---------------------------------------------------------------------------

AO_SEEDS = range(20)


@functools.lru_cache(maxsize=None)
def ao_runs():
    cfg = SystemConfig(N=12, N_v=3, M_t=4, M_r=4)
    part = Partition(12, 8)
    t0 = time.perf_counter()
    out = {}
    for seed in AO_SEEDS:
        ch = synthesize_channels(cfg, seed)
        out[seed] = tuple(run_ao(ph, cfg, ch, part) for ph in (1, 2))
    return out, time.perf_counter() - t0


def _monotone(res, tol=1e-8) -> bool:
    prev = res.trajectory[0]["crb_surface"]
    for t in res.trajectory[1:]:
        if t["crb_design"] > prev + tol or t["crb_surface"] > t["crb_design"] + tol:
            return False
        prev = t["crb_surface"]
    return True


def test_c05_ao_monotonicity():
    runs, elapsed = ao_runs()
    mono = all(_monotone(r) for pair in runs.values() for r in pair)
    conv = all(r.converged and r.iterations <= 30 for pair in runs.values() for r in pair)
    r_le_t = sum(pair[0].root_crb_deg <= pair[1].root_crb_deg for pair in runs.values()) / len(runs)
    detail = f"monotone {mono}, converged within 30 iterations {conv}, R <= T in {r_le_t:.0%} of {len(runs)} seeds"
    _finish(5, "AO monotonicity and convergence", mono and conv and r_le_t >= 0.9, detail, elapsed, 1800)


# ---------------------------------------------------------------------------
# 7: PDL vs exhaustive (before 6, which reuses these runs)
# ---------------------------------------------------------------------------

TOY = [(6, 2, 1), (6, 2, 2), (8, 2, 1), (8, 2, 2), (8, 2, 3), (10, 2, 1), (10, 2, 2), (12, 3, 1), (12, 3, 2), (12, 3, 3)]
# identical optima reached by separate SDP solves agree only to solver accuracy
SOLVER_RTOL = 1e-6


@functools.lru_cache(maxsize=None)
def pdl_runs():
    t0 = time.perf_counter()
    out = []
    for N, N_v, seed in TOY:
        cfg = SystemConfig(N=N, N_v=N_v, M_t=4, M_r=4, K=2, K1=1)
        ch = synthesize_channels(cfg, seed)
        for ph in (1, 2):
            out.append(((N, seed, ph), run_pdl(ph, cfg, ch), exhaustive_search(ph, cfg, ch)))
    return out, time.perf_counter() - t0


def test_c07_pdl_vs_exhaustive():
    runs, elapsed = pdl_runs()
    ratios = {key: math.sqrt(p.crb / e.crb) for key, p, e in runs}
    bad = {k: round(v, 4) for k, v in ratios.items() if not (1 - SOLVER_RTOL <= v <= 1.10)}
    detail = f"root-CRB ratio range [{min(ratios.values()):.4f}, {max(ratios.values()):.4f}], {len(bad)}/{len(ratios)} outside [1, 1.10]: {bad}"
    _finish(7, "PDL within 10% of exhaustive search", not bad, detail, elapsed, 3600)


# ---------------------------------------------------------------------------
# 6: rank-one quality of returned solutions
# ---------------------------------------------------------------------------


def test_c06_rank_one_quality():
    t0 = time.perf_counter()
    ao, _ = ao_runs()
    pdl, _ = pdl_runs()
    gaps, slacks = [], []
    for pair in ao.values():
        for r in pair:
            gaps.extend(r.rank_gaps)
            slacks.extend(np.atleast_1d(r.qos_slack).tolist())
    for _, p, _ in pdl:
        gaps.extend(p.rank_gaps)
        slacks.extend(np.atleast_1d(p.qos_slack).tolist())
    g, s = max(gaps, default=0.0), min(slacks, default=math.inf)
    _finish(6, "rank-one gaps and QoS slack", g < 1e-6 and s >= -1e-7, f"max Tr - sigma_max {g:.2e} (tol 1e-6), min slack {s:.2e} (tol -1e-7)", time.perf_counter() - t0, 3600)


# ---------------------------------------------------------------------------
# 8: MLE
# ---------------------------------------------------------------------------


def test_c08_mle_validation():
    t0 = time.perf_counter()
    cfg = SystemConfig(M_t=8, M_r=8, N=20, N_v=5, R_qos=2.5, P_U_max=float(dbm_to_watt(35.0)), P_BS_max=float(dbm_to_watt(35.0)))
    ch = synthesize_channels(cfg, 0)
    part = Partition(20, 5)
    fractions, crbs = [], []
    for ph in (1, 2):
        res = run_ao(ph, cfg, ch, part)
        crbs.append(res.root_crb_deg)
        truth = ch.target(ph)[0]
        hits = 0
        for s in range(50):
            X = simulate_frames(ph, ch, cfg, res.design, seed=s)
            Y = simulate_echo(ph, ch, part, res.u, X, cfg.sigma2, seed=1000 + s)
            est = mle_spectrum(Y, X, res.u, part, cfg.N_v, cfg.N_h).estimate
            hits += max(angle_error_deg(est, truth)) < 0.1
        fractions.append(hits / 50)
    detail = f"within 0.1 deg: R {fractions[0]:.0%}, T {fractions[1]:.0%} (need 95%); root-CRB R {crbs[0]:.3f} deg, T {crbs[1]:.3f} deg"
    _finish(8, "MLE estimates at the Fig. 5 configuration", min(fractions) >= 0.95, detail, time.perf_counter() - t0, 600)


# ---------------------------------------------------------------------------
# 9: solver health
# ---------------------------------------------------------------------------


def test_c09_solver_health():
    t0 = time.perf_counter()
    rng = make_rng(9)
    worst_obj = worst_res = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 8))
        m = int(rng.integers(1, n * (n + 1) // 2))
        prob, opt, _ = random_kkt_sdp(n, m, rng)
        rep = prob.solve(tol=1e-9)
        worst_obj = max(worst_obj, abs(rep.objective - opt) / max(1.0, abs(opt)))
        worst_res = max(worst_res, rep.primal_residual, rep.dual_residual)
    detail = f"max objective error {worst_obj:.2e} (tol 1e-6), max residual {worst_res:.2e} (tol 1e-7)"
    _finish(9, "KKT-certified SDPs", worst_obj < 1e-6 and worst_res < 1e-7, detail, time.perf_counter() - t0, 300)


# ---------------------------------------------------------------------------
# 10: qualitative trends, on the bundled CI profiles through the harness
# ---------------------------------------------------------------------------


def has_knee(values) -> bool:
    """Improvement at the start, then either a turn (interior minimum) or a flat tail.

    A flat tail means the last step improves by less than a quarter of the first.
    """
    v = np.asarray(values, dtype=float)
    if len(v) < 3 or not np.all(np.isfinite(v)):
        return False
    d = np.diff(v)
    if d[0] >= 0:
        return False
    return int(np.argmin(v)) < len(v) - 1 or abs(d[-1]) < 0.25 * abs(d[0])


def sweep_means(scenario: str, algo: str, metric: str, variant: str | None = None) -> dict:
    """Seed-averaged ``metric`` per phase along the sweep of a bundled CI profile."""
    spec = load_spec(scenario, "ci")
    spec = replace(spec, algorithms=(algo,), variants=[replace(v, algorithms=()) for v in spec.variants if variant in (None, v.label)])
    rows = [r for r in summarize(run_experiment(spec)) if r["metric"] == metric]
    out = {}
    for ph in ("R", "T"):
        pts = sorted((r["sweep_value"], r["mean"], r["n_failed"]) for r in rows if r["phase"] == ph)
        out[ph] = {"x": [p[0] for p in pts], "mean": [p[1] for p in pts], "failed": sum(p[2] for p in pts)}
    return out


def test_c10_trends():
    t0 = time.perf_counter()
    by_rate = sweep_means("fig7", "ao", "crb")
    by_n = sweep_means("fig9", "pdl", "root_crb_deg", variant="Mt8_Mr8")
    by_n2 = sweep_means("fig10", "ao", "root_crb_deg")

    def complete(d, n):
        return all(len(d[ph]["mean"]) == n and d[ph]["failed"] == 0 for ph in d)

    def monotone(v, sign):
        v = np.asarray(v, dtype=float)
        return bool(np.all(sign * np.diff(v) >= -SOLVER_RTOL * np.abs(v[:-1])))

    inc_r = complete(by_rate, 3) and all(monotone(by_rate[ph]["mean"], +1) for ph in by_rate)
    dec_n = complete(by_n, 4) and all(monotone(by_n[ph]["mean"], -1) for ph in by_n)
    knee = complete(by_n2, 6) and all(has_knee(by_n2[ph]["mean"]) for ph in by_n2)

    def fmt(d):
        return {ph: [float(f"{x:.7g}") for x in d[ph]["mean"]] + ([f"{d[ph]['failed']} failed"] if d[ph]["failed"] else []) for ph in d}

    detail = f"CRB nondecreasing in R_qos {inc_r} {fmt(by_rate)}; root-CRB nonincreasing in N {dec_n} {fmt(by_n)}; N2 knee {knee} {fmt(by_n2)}"
    _finish(10, "qualitative trends", inc_r and dec_n and knee, detail, time.perf_counter() - t0, 3600)
