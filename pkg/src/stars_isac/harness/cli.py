"""Command-line entry point: ``stars-isac <subcommand> --spec fig7 ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..estimate import write_spectrum_csv
from .config import ALGORITHMS, SpecError, bundled_scenarios, load_spec, parse_seeds, spec_from_dict
from .emit import emit, summarize, write_convergence, write_summary
from .experiments import run_experiment

EXIT_OK, EXIT_PARTIAL, EXIT_INFEASIBLE = 0, 2, 3

SINGLE = {"ao": "ao", "pdl": "pdl", "exhaustive": "exhaustive", "mle": "mle", "verify": "verify", "simulate": "rate"}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stars-isac", description="CRB-driven STARS ISAC experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "ao", "pdl", "exhaustive", "mle", "verify", "sweep"):
        s = sub.add_parser(name)
        s.add_argument("--spec", default=None if name == "verify" else argparse.SUPPRESS, required=name != "verify", help="scenario YAML path or bundled name (fig3 ... fig10)")
        s.add_argument("--seeds", default=None, help="N, a:b or comma list; overrides the scenario")
        s.add_argument("--out", default=None, help="output directory; stdout if omitted")
        s.add_argument("--format", choices=("csv", "jsonl"), default="csv")
        s.add_argument("--profile", choices=("full", "ci"), default="full")
        s.add_argument("--algo", choices=ALGORITHMS, default=None, help="override the algorithm")
        s.add_argument("--at", type=float, default=None, help="single sweep value (defaults to the first)")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--wall-time", action="store_true", help="include wall time in the raw records")
        s.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("list", help="list bundled scenarios")
    return p


def _spec_for(args):
    if args.command == "verify" and args.spec is None:
        spec = spec_from_dict({"scenario": "verify", "algorithms": ["verify"], "seeds": 1, "phases": []})
    else:
        spec = load_spec(args.spec, args.profile)
    algo = args.algo or SINGLE.get(args.command)
    if algo is not None:
        spec = replace(spec, algorithms=(algo,), variants=[replace(v, algorithms=()) for v in spec.variants])
    if args.command != "sweep":
        value = args.at if args.at is not None else spec.sweep_values[0]
        spec = replace(spec, sweep_values=[value])
    if args.seeds is not None:
        spec = replace(spec, seeds=parse_seeds(args.seeds))
    return spec


def _report_mle(records, stream) -> None:
    for r in records:
        if r.algo == "mle" and r.ok:
            e = r.extra
            stream.write(f"{r.variant} seed {r.seed} phase {r.phase}: estimate ({e['est_azimuth_deg']:.4f}, {e['est_elevation_deg']:.4f}) deg, root-CRB {r.root_crb_deg:.4f} deg\n")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        print("\n".join(bundled_scenarios()))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = _spec_for(args)
        records = list(run_experiment(spec, workers=args.workers))
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    tag = f"{spec.scenario}_{args.command}"
    ext = "csv" if args.format == "csv" else "jsonl"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{tag}.{ext}", "w", newline="") as fh:
            emit(records, args.format, fh, args.wall_time)
        with open(out / f"{tag}_summary.csv", "w", newline="") as fh:
            write_summary(summarize(records), fh)
        if any("trajectory_root_crb_deg" in r.extra for r in records):
            with open(out / f"{tag}_convergence.csv", "w", newline="") as fh:
                write_convergence(records, fh)
        done = set()
        for r in records:
            sp = getattr(r, "_spectrum", None)
            if sp is not None and (r.variant, r.phase) not in done:
                done.add((r.variant, r.phase))
                with open(out / f"{tag}_spectrum_{r.variant}_{r.phase}_seed{r.seed}.csv", "w", newline="") as fh:
                    write_spectrum_csv(sp, fh)
    else:
        emit(records, args.format, sys.stdout, args.wall_time)
    _report_mle(records, sys.stderr)
    failed = [r for r in records if not r.ok]
    if records and len(failed) == len(records) and all(r.status.startswith("infeasible") for r in failed):
        print("error: every run was infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    if failed:
        print(f"warning: {len(failed)} of {len(records)} records failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
