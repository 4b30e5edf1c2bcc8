"""Result records and their CSV / JSON-lines serialisation.

Floats are written with 12 significant digits and the column order is fixed,
so a given set of records always produces the same bytes.  Wall time is the
only nondeterministic field and is left out unless asked for.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from .. import __version__

ARTIFACT_VERSION = f"stars-isac-v{__version__}"
FLOAT_DIGITS = 12


@dataclass
class ResultRecord:
    scenario: str
    variant: str
    algo: str
    seed: int
    sweep_name: str
    sweep_value: float | None
    phase: str  # "R", "T" or "" for phase-free checks
    status: str = "ok"
    crb: float = math.nan
    root_crb_deg: float = math.nan
    N1: int | None = None
    N2: int | None = None
    iterations: int | None = None
    rates: tuple = ()
    extra: dict = field(default_factory=dict)
    version: str = ARTIFACT_VERSION
    wall_time: float = math.nan

    @property
    def ok(self) -> bool:
        return self.status == "ok"


COLUMNS = [f.name for f in fields(ResultRecord)]
_FLOAT_COLS = {"sweep_value", "crb", "root_crb_deg", "wall_time"}
_INT_COLS = {"seed", "N1", "N2", "iterations"}


def fmt_float(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{FLOAT_DIGITS}g}"


def round_sig(x):
    """Round a float (or nested structure of floats) to the serialised precision."""
    if isinstance(x, dict):
        return {k: round_sig(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [round_sig(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(fmt_float(x))
    return x


def _cell(name: str, value) -> str:
    if name in _FLOAT_COLS:
        return fmt_float(value)
    if name in _INT_COLS:
        return "" if value is None else str(int(value))
    if name == "rates":
        return ";".join(fmt_float(r) for r in value)
    if name == "extra":
        return json.dumps(round_sig(value), sort_keys=True, separators=(",", ":"))
    return str(value)


def _columns(include_wall_time: bool) -> list[str]:
    return COLUMNS if include_wall_time else [c for c in COLUMNS if c != "wall_time"]


def write_csv(records, fh, include_wall_time: bool = False) -> None:
    cols = _columns(include_wall_time)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        w.writerow([_cell(c, getattr(r, c)) for c in cols])


def write_jsonl(records, fh, include_wall_time: bool = False) -> None:
    cols = _columns(include_wall_time)
    for r in records:
        d = asdict(r)
        row = {c: round_sig(d[c]) for c in cols}
        row["rates"] = list(row["rates"])
        fh.write(json.dumps(row, sort_keys=False, separators=(",", ":")) + "\n")


def emit(records, fmt: str, fh, include_wall_time: bool = False) -> None:
    if fmt == "csv":
        write_csv(records, fh, include_wall_time)
    elif fmt in ("jsonl", "json-lines"):
        write_jsonl(records, fh, include_wall_time)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _parse(name: str, text: str):
    if name in _FLOAT_COLS:
        return None if text == "" else float(text)
    if name in _INT_COLS:
        return None if text == "" else int(text)
    if name == "rates":
        return tuple(float(x) for x in text.split(";")) if text else ()
    if name == "extra":
        return json.loads(text) if text else {}
    return text


def read_csv(fh) -> list[ResultRecord]:
    rows = list(csv.reader(fh))
    if not rows:
        return []
    header, out = rows[0], []
    for row in rows[1:]:
        out.append(ResultRecord(**{c: _parse(c, v) for c, v in zip(header, row)}))
    return out


def read_jsonl(fh) -> list[ResultRecord]:
    out = []
    for line in fh:
        if line.strip():
            d = json.loads(line)
            d["rates"] = tuple(d.get("rates", ()))
            out.append(ResultRecord(**d))
    return out


def parse(text: str, fmt: str) -> list[ResultRecord]:
    return read_csv(io.StringIO(text)) if fmt == "csv" else read_jsonl(io.StringIO(text))


def dumps(records, fmt: str = "csv", include_wall_time: bool = False) -> str:
    buf = io.StringIO()
    emit(records, fmt, buf, include_wall_time)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = ["scenario", "variant", "algo", "sweep_name", "sweep_value", "phase", "metric", "n", "n_failed", "failure_rate", "mean", "ci95_low", "ci95_high"]


def mean_ci95(values) -> tuple[float, float, float]:
    """Mean and Student-t 95% interval; the interval is nan for fewer than two values."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    m = float(np.mean(v))
    if v.size < 2:
        return m, math.nan, math.nan
    half = float(stats.t.ppf(0.975, v.size - 1) * np.std(v, ddof=1) / math.sqrt(v.size))
    return m, m - half, m + half


def _metrics(r: ResultRecord) -> dict:
    out = {}
    for name in ("crb", "root_crb_deg", "N1", "N2", "iterations"):
        val = getattr(r, name)
        if val is not None and not (isinstance(val, float) and math.isnan(val)):
            out[name] = float(val)
    for i, rate in enumerate(r.rates):
        out[f"rate_{i + 1}"] = float(rate)
    for k, v in r.extra.items():
        if isinstance(v, (bool, np.bool_)):
            out[k] = float(v)
        elif isinstance(v, (int, float, np.integer, np.floating)):
            out[k] = float(v)
    return out


def summarize(records) -> list[dict]:
    """Per (scenario, variant, algo, sweep value, phase, metric) mean and 95% CI over seeds.

    Only successful records contribute to the statistics; infinite values
    (unidentifiable points) are kept out of the mean and counted as failures.
    """
    groups: dict = {}
    for r in records:
        key = (r.scenario, r.variant, r.algo, r.sweep_name, r.sweep_value, r.phase)
        groups.setdefault(key, []).append(r)
    rows = []
    for key, recs in groups.items():
        n_fail = sum(not r.ok for r in recs)
        per_metric: dict = {}
        for r in recs:
            if r.ok:
                for m, v in _metrics(r).items():
                    per_metric.setdefault(m, []).append(v)
        for m in sorted(per_metric):
            vals = [v for v in per_metric[m] if math.isfinite(v)]
            mean, lo, hi = mean_ci95(vals)
            nf = n_fail + len(per_metric[m]) - len(vals)
            rows.append(dict(zip(SUMMARY_COLUMNS, [*key, m, len(vals), nf, nf / len(recs), mean, lo, hi])))
    return rows


def write_summary(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([fmt_float(row[c]) if isinstance(row[c], float) else ("" if row[c] is None else str(row[c])) for c in SUMMARY_COLUMNS])


def write_convergence(records, fh) -> None:
    """Iteration-indexed root-CRB (degrees) averaged over seeds, one column per phase.

    Shorter trajectories are padded with their final value.
    """
    traj = {"R": [], "T": []}
    for r in records:
        t = r.extra.get("trajectory_root_crb_deg")
        if r.ok and t and r.phase in traj:
            traj[r.phase].append(t)
    length = max((len(t) for ts in traj.values() for t in ts), default=0)
    cols = {}
    for ph, ts in traj.items():
        if ts:
            padded = np.array([list(t) + [t[-1]] * (length - len(t)) for t in ts], dtype=float)
            cols[ph] = padded.mean(axis=0)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["iter", "root_crb_deg_R", "root_crb_deg_T"])
    for i in range(length):
        w.writerow([i] + [fmt_float(cols[ph][i]) if ph in cols else "" for ph in ("R", "T")])
