"""Command line entry point: ``tla run|compare|plot|validate``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .ddi import DdiError
from .scenario import (ConstraintViolation, RunSummary, ScenarioError, bundled, compare, load_scenario, run,
                       write_outputs)

OUTPUT_ENV = "TLA_OUTPUT_DIR"
EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


def _scenario_path(ref: str) -> Path:
    """A file path, or the name of a bundled fixture (``crosswalk_cooperative``)."""
    p = Path(ref)
    if p.exists():
        return p
    for cand in (bundled(ref), bundled(ref + ".json")):
        if cand.exists():
            return cand
    return p


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or "tla_output")


def _run_one(path: Path, out_dir: Path, seed: int, verbose: bool, plots: bool) -> dict:
    sc = load_scenario(path)
    # batch runs get one directory per scenario so parallel workers never share files
    result = run(sc, seed=seed, verbose=verbose)
    paths = write_outputs(result, sc, out_dir, verbose)
    if plots:
        from .plots import emit_plots
        emit_plots(paths["log"], out_dir)
    return result.summary.to_dict()


def cmd_run(args) -> int:
    out = _out_dir(args.out)
    paths = [_scenario_path(s) for s in args.scenarios]
    dirs = [out if len(paths) == 1 else out / load_scenario(p).name for p in paths]
    jobs = [(p, d, args.seed, args.verbose, not args.no_plots) for p, d in zip(paths, dirs)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_run_one, *zip(*jobs)))
    else:
        summaries = [_run_one(*j) for j in jobs]
    for s in summaries:
        print(f"{s['name']}: energy {s['total_energy'] / 1e3:.2f} kJ, min speed {s['min_velocity']:.2f} m/s, "
              f"stops {s['stop_count']}, time {s['travel_time']:.1f} s, infeasible replans {s['infeasible_replans']}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    a = RunSummary.from_dict(json.loads(Path(args.baseline).read_text()))
    b = RunSummary.from_dict(json.loads(Path(args.other).read_text()))
    report = compare(a, b)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"compare_{a.name}_vs_{b.name}.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"{b.name} vs {a.name}: energy {report['energy_delta_percent']:+.2f}% saved, "
          f"stops {report['stop_delta']:+d}, time {report['time_delta']:+.1f} s")
    print(f"report written to {path}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plots import emit_plots
    for p in emit_plots(args.log, args.out):
        print(p)
    return EXIT_OK


def cmd_validate(args) -> int:
    for ref in args.scenarios:
        sc = load_scenario(_scenario_path(ref))
        print(f"{ref}: ok ({sc.name})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tla", description="Traffic light assistant scenario runner")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run scenarios and write logs, summaries and plots")
    p.add_argument("scenarios", nargs="+", help="scenario JSON files or bundled fixture names")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./tla_output)")
    p.add_argument("--verbose", action="store_true", help="also write per-replan plans and message logs")
    p.add_argument("--seed", type=int, default=0, help="seed for the message-drop channel")
    p.add_argument("--jobs", type=int, default=1, help="run several scenarios in parallel")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="energy, stop and time deltas of two run summaries")
    p.add_argument("baseline")
    p.add_argument("other")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="render distance and speed figures from a run log")
    p.add_argument("log")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("validate", help="check scenario files without running them")
    p.add_argument("scenarios", nargs="+")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConstraintViolation as exc:
        print(f"constraint violation: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (ScenarioError, DdiError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
