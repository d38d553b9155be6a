"""Command-line front end: run scenarios, fit parameters, compare summaries.

Exit codes: 0 success, 2 scenario/fitspec parse error, 3 simulation
divergence, 4 infeasible controller configuration.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import yaml

from .engine import DivergenceError, TrajectoryLog
from .identify import Dataset, FitSpec, fit
from .model import ChainParams
from .runner import RunSummary, format_report, run_scenario
from .scenario import ScenarioError, parse_scenario, serialize_scenario
from .sync import RotationError
from .wave import CompensationError, TravelTimeError

EXIT_PARSE = 2
EXIT_DIVERGED = 3
EXIT_INFEASIBLE = 4

OUT_DIR_ENV = "CHAINLAB_OUT_DIR"


def _out_dir(args) -> str:
    out = args.out_dir or os.environ.get(OUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _cmd_run(args) -> int:
    sc = parse_scenario(args.scenario)
    if args.dt is not None:
        sc.integrator = replace(sc.integrator, dt=args.dt)
    if args.td is not None:
        sc.sensor = replace(sc.sensor, td=args.td)
    out_dir = _out_dir(args)
    effective = serialize_scenario(sc)
    if not args.quiet:
        print(f"# effective configuration of '{sc.name}'")
        print(effective)
    log, summary = run_scenario(sc)
    csv_path = os.path.join(out_dir, sc.output)
    log.to_csv(csv_path)
    with open(os.path.join(out_dir, sc.output + ".effective.yaml"), "w") as f:
        f.write(effective)
    summary_path = os.path.join(out_dir, sc.name + ".summary.json")
    with open(summary_path, "w") as f:
        f.write(summary.to_json())
    print(f"wrote {csv_path}")
    print(f"wrote {summary_path}")
    print(format_report([summary]))
    return 0


def _parse_fitspec(path) -> FitSpec:
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ScenarioError(f"cannot read fit spec {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ScenarioError("fit spec must be a YAML mapping")
    known = {"base", "free", "guess", "bounds", "multi_start", "max_evals",
             "seed", "substeps"}
    unknown = set(doc) - known
    if unknown:
        raise ScenarioError(f"unknown fit spec key(s) {sorted(unknown)}")
    base_node = doc.get("base") or {}
    N = base_node.get("N", 5)
    base = ChainParams.platform(N)
    overrides = {k: float(v) for k, v in base_node.items() if k != "N"}
    if overrides:
        base = replace(base, **overrides)
    free = tuple(doc.get("free", ("k", "b", "gamma")))
    bounds = {k: tuple(v) for k, v in (doc.get("bounds") or {}).items()}
    try:
        return FitSpec(base=base, free=free, guess=dict(doc.get("guess") or {}),
                       bounds=bounds,
                       multi_start=int(doc.get("multi_start", 3)),
                       max_evals=int(doc.get("max_evals", 2000)),
                       seed=int(doc.get("seed", 0)),
                       substeps=doc.get("substeps"))
    except ValueError as e:
        raise ScenarioError(f"invalid fit spec: {e}") from e


def _cmd_identify(args) -> int:
    *data_files, spec_file = args.files
    if not data_files:
        raise ScenarioError("usage: identify DATASET.csv [DATASET.csv ...] FITSPEC.yaml")
    spec = _parse_fitspec(spec_file)
    if args.seed is not None:
        spec.seed = args.seed
    datasets = [Dataset.from_log(TrajectoryLog.from_csv(f)) for f in data_files]
    result = fit(datasets, spec)
    print(result.report())
    out_dir = _out_dir(args)
    stem = os.path.splitext(os.path.basename(spec_file))[0]
    report_path = os.path.join(out_dir, stem + ".fit.txt")
    with open(report_path, "w") as f:
        f.write(result.report() + "\n")
    csv_path = os.path.join(out_dir, stem + ".fit.csv")
    names = list(result.values)
    with open(csv_path, "w") as f:
        f.write(",".join(names + ["objective", "nrmse_mean", "converged"]) + "\n")
        f.write(",".join([f"{result.values[n]:.12g}" for n in names]
                         + [f"{result.objective:.12g}", f"{result.nrmse_mean:.12g}",
                            str(result.converged).lower()]) + "\n")
    print(f"wrote {report_path}")
    print(f"wrote {csv_path}")
    return 0


def _cmd_report(args) -> int:
    summaries = []
    for path in args.summaries:
        with open(path) as f:
            summaries.append(RunSummary.from_json(f.read()))
    print(format_report(summaries))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chainlab",
        description="Coupled pendulum chain: simulation, boundary control, "
                    "identification")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out-dir", default=None,
                       help=f"output directory (default: ${OUT_DIR_ENV} or .)")
    p_run.add_argument("--dt", type=float, default=None, help="override physics step")
    p_run.add_argument("--td", type=float, default=None, help="override feedback latency")
    p_run.add_argument("--seed", type=int, default=None, help="accepted for uniformity")
    p_run.add_argument("--quiet", action="store_true",
                       help="suppress the effective-config echo")
    p_run.set_defaults(func=_cmd_run)

    p_id = sub.add_parser("identify", help="grey-box fit from dataset CSVs")
    p_id.add_argument("files", nargs="+",
                      help="DATASET.csv [DATASET.csv ...] FITSPEC.yaml")
    p_id.add_argument("--out-dir", default=None)
    p_id.add_argument("--seed", type=int, default=None)
    p_id.set_defaults(func=_cmd_identify)

    p_rep = sub.add_parser("report", help="tabulate run summaries")
    p_rep.add_argument("summaries", nargs="+")
    p_rep.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except DivergenceError as e:
        print(f"error: simulation diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CompensationError, TravelTimeError, RotationError) as e:
        print(f"error: infeasible controller: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
