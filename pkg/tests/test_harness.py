import io
import math

import numpy as np
import pytest

from stars_isac.harness.baselines import half_config, half_surface
from stars_isac.harness.cli import main
from stars_isac.harness.config import ALGORITHMS, SpecError, apply_sweep, bundled_scenarios, load_spec, parse_seeds, spec_from_dict, system_from_dict
from stars_isac.harness.emit import COLUMNS, ResultRecord, dumps, mean_ci95, parse, read_csv, summarize, write_convergence, write_csv
from stars_isac.harness.experiments import run_experiment
from stars_isac.model import SystemConfig, dbm_to_watt, synthesize_channels


def _rec(**kw):
    base = dict(scenario="s", variant="v", algo="ao", seed=0, sweep_name="R_qos", sweep_value=1.0, phase="R")
    base.update(kw)
    return ResultRecord(**base)


RECORDS = [
    _rec(crb=1.2345678901234e-3, root_crb_deg=2.0131, N1=8, N2=4, iterations=5, rates=(1.5, 0.25), extra={"converged": True, "trajectory_root_crb_deg": [3.0, 2.5, 2.0]}),
    _rec(seed=1, phase="T", crb=math.inf, root_crb_deg=math.inf, status="failed: UnidentifiableError: x"),
    _rec(seed=2, sweep_value=None, sweep_name="", phase="", extra={"check": "fim_oracle", "value": 1e-11}),
]


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_emit_round_trip(fmt):
    text = dumps(RECORDS, fmt)
    back = parse(text, fmt)
    assert dumps(back, fmt) == text
    assert back[0].rates == (1.5, 0.25)
    assert back[0].extra["trajectory_root_crb_deg"] == [3.0, 2.5, 2.0]
    assert math.isinf(back[1].crb) and back[1].status.startswith("failed")
    assert back[2].sweep_value is None and back[0].N1 == 8


def test_wall_time_excluded_by_default():
    header = dumps(RECORDS, "csv").splitlines()[0].split(",")
    assert "wall_time" not in header
    assert header == [c for c in COLUMNS if c != "wall_time"]
    assert "wall_time" in dumps(RECORDS, "csv", include_wall_time=True).splitlines()[0]


def test_empty_csv_is_header_only():
    buf = io.StringIO()
    write_csv([], buf)
    assert buf.getvalue().count("\n") == 1
    assert read_csv(io.StringIO(buf.getvalue())) == []


def test_summary_mean_and_failures():
    recs = [_rec(seed=s, crb=float(s + 1)) for s in range(4)] + [_rec(seed=9, status="infeasible: qos")]
    rows = {r["metric"]: r for r in summarize(recs)}
    assert rows["crb"]["mean"] == pytest.approx(2.5)
    assert rows["crb"]["n"] == 4 and rows["crb"]["n_failed"] == 1
    assert rows["crb"]["failure_rate"] == pytest.approx(0.2)
    lo, hi = rows["crb"]["ci95_low"], rows["crb"]["ci95_high"]
    assert lo < 2.5 < hi


def test_mean_ci95_degenerate():
    m, lo, hi = mean_ci95([3.0])
    assert m == 3.0 and math.isnan(lo) and math.isnan(hi)
    assert math.isnan(mean_ci95([])[0])


def test_convergence_schema():
    recs = [
        _rec(phase="R", extra={"trajectory_root_crb_deg": [3.0, 2.0]}),
        _rec(phase="R", seed=1, extra={"trajectory_root_crb_deg": [5.0, 4.0, 3.0]}),
        _rec(phase="T", extra={"trajectory_root_crb_deg": [1.0]}),
    ]
    buf = io.StringIO()
    write_convergence(recs, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iter,root_crb_deg_R,root_crb_deg_T"
    assert len(lines) == 4
    last = [float(x) for x in lines[-1].split(",")]
    assert last[1] == pytest.approx(2.5) and last[2] == pytest.approx(1.0)


def test_bundled_scenarios_load():
    names = bundled_scenarios()
    for n in ("fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10"):
        assert n in names
        for profile in ("full", "ci"):
            spec = load_spec(n, profile)
            assert spec.seeds and spec.variants
    assert len(load_spec("fig7", "ci").seeds) == 10


def test_spec_errors():
    with pytest.raises(SpecError):
        spec_from_dict({"algorithms": ["nope"]})
    with pytest.raises(SpecError):
        spec_from_dict({})
    with pytest.raises(SpecError):
        load_spec("no-such-scenario")
    assert "ao" in ALGORITHMS


def test_parse_seeds():
    assert parse_seeds("3") == (0, 1, 2)
    assert parse_seeds("2:5") == (2, 3, 4)
    assert parse_seeds("1,4") == (1, 4)
    assert parse_seeds(2) == (0, 1)


def test_system_units_and_sweeps():
    raw = {"N": 12, "N_v": 3, "P_U_max_dbm": 10, "noise_dbm": -100}
    cfg = system_from_dict(raw)
    assert cfg.P_U_max == pytest.approx(dbm_to_watt(10.0))
    assert cfg.sigma2 == pytest.approx(dbm_to_watt(-100.0))
    c2, n1 = apply_sweep(cfg, raw, "N2", 4, None)
    assert n1 == 8
    c3, _ = apply_sweep(cfg, raw, "P_U_max_dbm", 20, 8)
    assert c3.P_U_max == pytest.approx(dbm_to_watt(20.0))


@pytest.mark.parametrize("N,N_v,expect", [(2, 1, (1, 1)), (16, 8, (4, 2)), (20, 5, (5, 2)), (12, 3, (3, 2))])
def test_half_surface(N, N_v, expect):
    cfg = SystemConfig(N=N, N_v=N_v, M_t=2, M_r=2)
    ch = synthesize_channels(cfg, 0)
    sub = half_surface(ch)
    assert sub.N == N // 2
    assert (sub.N_v, sub.N_h) == expect
    assert half_config(cfg, sub).N == N // 2


def _tiny_spec(seeds=2):
    return spec_from_dict(
        {
            "scenario": "tiny",
            "algorithms": ["sensors", "rate"],
            "system": {"N": 8, "N_v": 2, "M_t": 2, "M_r": 1},
            "partition": {"N1": 4},
            "sweep": {"name": "P_U_max_dbm", "values": [10, 20]},
            "options": {"mc_draws": 200},
            "seeds": seeds,
        }
    )


def test_run_experiment_deterministic_and_worker_independent():
    a = dumps(list(run_experiment(_tiny_spec())), "csv")
    b = dumps(list(run_experiment(_tiny_spec())), "csv")
    c = dumps(list(run_experiment(_tiny_spec(), workers=2)), "csv")
    assert a == b == c
    recs = parse(a, "csv")
    assert len(recs) == 2 * 2 * (2 + 2)
    assert all(r.extra["match"] for r in recs if r.algo == "sensors" and r.ok)


def test_cli_verify_exit_zero(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    out = (tmp_path / "verify_verify.csv").read_text()
    assert "fim_oracle" in out and "conic_kkt" in out


def test_cli_bad_spec_exit_three(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario: bad\nalgorithms: [warp-drive]\n")
    assert main(["sweep", "--spec", str(bad)]) == 3


def test_cli_list(capsys):
    assert main(["list"]) == 0
    assert "fig7" in capsys.readouterr().out


def test_cli_sweep_to_stdout(capsys):
    assert main(["simulate", "--spec", "fig4", "--algo", "sensors", "--seeds", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("scenario,variant,algo")
    assert len(lines) == 1 + 2 * 2  # two variants, two users
    np.testing.assert_equal(len(lines[1].split(",")) >= len(COLUMNS) - 1, True)
