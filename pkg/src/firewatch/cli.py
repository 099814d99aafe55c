"""Command-line entry point: ``simulate``, ``experiment`` and ``bounds``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 when some
planning round ran out of UAVs (metrics are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import metrics
from .config import ConfigError, load
from .experiments import EXPERIMENTS, get_experiment, run_trials
from .fire_sim import Case
from .harness import run_scenario
from .qos_bounds import service_time_bound

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INSUFFICIENT = 3

PLOTTED = ("alive", "allocated", "mean_t_ub", "max_urr", "cumulative_residual", "cumulative_uncertainty")


def _simulate(args) -> int:
    cfg = load(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides({"sim": {"seed": args.seed}})
    rec = run_scenario(cfg)
    out = Path(args.out)
    metrics.write_text(out / "metrics.csv", metrics.record_csv(rec))
    last = dict(zip(rec.columns, rec.rows[-1])) if rec.rows else {}
    metrics.write_json(out / "summary.json", {
        "schema_version": metrics.SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "steps": len(rec.rows),
        "insufficient_rounds": rec.insufficient_rounds,
        "events": len(rec.events),
        "final": last,
    })
    if rec.rows:
        for name in PLOTTED:
            metrics.write_text(out / "plots" / f"{name}.svg",
                               metrics.svg_lines({name: rec.column(name).tolist()}, name))
    print(f"wrote {len(rec.rows)} rows to {out / 'metrics.csv'}")
    if rec.insufficient_rounds:
        print(f"insufficient UAVs in {rec.insufficient_rounds} round(s)", file=sys.stderr)
        return EXIT_INSUFFICIENT
    return EXIT_OK


def _experiment(args) -> int:
    exp = get_experiment(args.name)
    grid = json.loads(args.grid) if args.grid else {}
    specs = exp.specs(seeds=args.seeds, base_seed=args.base_seed, **grid)
    results = run_trials(exp, specs, args.workers)
    from .metrics import summarize_trials
    summary = summarize_trials(args.name, exp.metrics, results,
                               {"seeds": args.seeds, "base_seed": args.base_seed, **grid})
    paths = metrics.write_experiment(args.out, args.name, results, summary, exp.metrics)
    print(f"{len(results)} trials; summary at {paths['summary']}")
    return EXIT_OK


def _bounds(args) -> int:
    case = Case.parse(args.case)
    if case == Case.MOVING_SPREADING and args.fov is None:
        raise ConfigError(["--fov: required for case 3"])
    t_ub = service_time_bound(case, args.path_len, args.v, args.zeta, args.nq,
                              args.fov if args.fov is not None else 1.0, literal=args.literal)
    feasible = math.isfinite(t_ub)
    print(json.dumps({"case": int(case), "t_ub": t_ub if feasible else "inf", "feasible": feasible}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="firewatch", description="Wildfire monitoring planner and simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one scenario from a JSON config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, help="override sim.seed")
    sim.set_defaults(func=_simulate)

    exp = sub.add_parser("experiment", help="run a named experiment grid")
    exp.add_argument("name", help=", ".join(sorted(EXPERIMENTS)))
    exp.add_argument("--seeds", type=int, default=10)
    exp.add_argument("--seed", dest="base_seed", type=int, default=0, help="base seed")
    exp.add_argument("--out", default="results")
    exp.add_argument("--workers", type=int, default=1)
    exp.add_argument("--grid", help="JSON object of extra grid keyword arguments")
    exp.set_defaults(func=_experiment)

    bnd = sub.add_parser("bounds", help="evaluate a service-time bound")
    bnd.add_argument("--case", required=True, choices=["1", "2", "3"])
    bnd.add_argument("--path-len", type=float, required=True)
    bnd.add_argument("--v", type=float, required=True)
    bnd.add_argument("--zeta", type=float, default=0.0)
    bnd.add_argument("--nq", type=int, default=1)
    bnd.add_argument("--fov", type=float)
    bnd.add_argument("--literal", action="store_true", help="surcharge-only bounds without the static tour time")
    bnd.set_defaults(func=_bounds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
