"""
Command line entry point

    pbdplan run EXPERIMENT.yaml [--out DIR] [--seed N] [--planner KIND] [--depth D] [--samples S] [--store]
    pbdplan episode SCENARIO.yaml --planner KIND [--depth D] [--samples S] [--seed N]
    pbdplan bound --gamma G --depth H --samples N --max-macros M --delta D (--v-max V | --max-reward R)
    pbdplan plotdata RESULTS_DIR [--out FILE]
    pbdplan serve [--host H] [--port P]

Exit status 0 on success, 2 on configuration or validation errors, 1 on
anything unexpected.
"""
import argparse
import logging
import sys
from pathlib import Path

import yaml
from pydantic import ValidationError

from pbdplan.config import configure_logging
from pbdplan.errors import ConfigError, PlannerError
from pbdplan.harness import (
    emit_plot_data,
    load_experiment,
    load_scenario,
    make_domain,
    read_summary,
    run_episode,
    run_experiment,
    store_results,
    summary_table,
)
from pbdplan.planner import epsilon_bound, value_bound
from pbdplan.schemas import BoundInputs, PlannerConfig, PlannerKind

logger = logging.getLogger(__name__)


def _planner_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--planner", type=str.upper, choices=[k.value for k in PlannerKind])
    parser.add_argument("--depth", type=int, help="macro-action search depth")
    parser.add_argument("--samples", type=int, help="posterior samples per macro-action")
    parser.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbdplan", description="Macro-action belief-space planning experiments")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ...")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment file")
    run.add_argument("config", type=Path)
    run.add_argument("--out", type=Path, help="output directory (default: the file's output_dir)")
    run.add_argument("--store", action="store_true", help="also store results in the database")
    _planner_overrides(run)

    episode = sub.add_parser("episode", help="one seeded rollout with a step log")
    episode.add_argument("scenario", type=Path)
    episode.add_argument("--scenario-index", type=int, default=0)
    episode.add_argument("--max-steps", type=int)
    _planner_overrides(episode)

    bound = sub.add_parser("bound", help="sampling error bound of the PBD value")
    bound.add_argument("--gamma", type=float, required=True)
    bound.add_argument("--depth", type=int, required=True)
    bound.add_argument("--samples", type=int, required=True)
    bound.add_argument("--max-macros", type=int, required=True)
    bound.add_argument("--delta", type=float, required=True)
    v_max = bound.add_mutually_exclusive_group(required=True)
    v_max.add_argument("--v-max", type=float)
    v_max.add_argument("--max-reward", type=float, help="derive V_max as max reward / (1 - gamma)")

    plotdata = sub.add_parser("plotdata", help="summary.csv of a results directory -> plot CSV")
    plotdata.add_argument("results", type=Path)
    plotdata.add_argument("--out", type=Path)

    serve = sub.add_parser("serve", help="start the HTTP API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _apply_overrides(planners: list[PlannerConfig], args) -> list[PlannerConfig]:
    if args.planner:
        base = {"kind": PlannerKind(args.planner)}
        planners = [PlannerConfig(**base)]
    updates = {}
    if args.depth is not None:
        updates["depth"] = args.depth
    if args.samples is not None:
        updates["samples"] = args.samples
    if not updates:
        return planners
    return [PlannerConfig.model_validate({**p.model_dump(), **updates}) for p in planners]


# ===== Commands =====

def cmd_run(args) -> int:
    cfg = load_experiment(args.config)
    data = cfg.model_dump()
    data["planners"] = [p.model_dump() for p in _apply_overrides(cfg.planners, args)]
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = type(cfg).model_validate(data)

    report = run_experiment(cfg, args.out)
    print(summary_table(report.summary))
    if args.store:
        from pbdplan import models  # noqa: F401  registers the tables on Base
        from pbdplan.database import Base, SessionLocal, engine

        Base.metadata.create_all(bind=engine)
        with SessionLocal() as db:
            run = store_results(db, report)
            print(f"stored as run {run.id}")
    return 0


def cmd_episode(args) -> int:
    scenario = load_scenario(args.scenario)
    domain = make_domain(scenario)
    if not args.planner:
        raise ConfigError("episode needs --planner")
    planner = _apply_overrides([], args)[0]
    result = run_episode(domain, planner, args.seed or 0, scenario=args.scenario_index, max_steps=args.max_steps)
    for t, step in enumerate(result.steps):
        print(f"{t:4d}  {step.action:<24} reward {step.reward:10.4f}  plan {step.planning_time * 1000:9.2f} ms")
    print(f"{result.planner_id}: discounted return {result.discounted_return:.6f} over {len(result.steps)} steps")
    return 0


def cmd_bound(args) -> int:
    v_max = args.v_max if args.v_max is not None else value_bound(args.max_reward, args.gamma)
    inputs = BoundInputs(gamma=args.gamma, horizon=args.depth, samples=args.samples,
                         max_macros=args.max_macros, delta=args.delta, v_max=v_max)
    print(f"{epsilon_bound(inputs):.10g}")
    return 0


def cmd_plotdata(args) -> int:
    source = args.results / "summary.csv" if args.results.is_dir() else args.results
    if not source.exists():
        raise ConfigError(f"no summary found at {source}")
    out = args.out or source.with_name("plot_data.csv")
    emit_plot_data(read_summary(source), out)
    print(out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("pbdplan.main:app", host=args.host, port=args.port)
    return 0


COMMANDS = {
    "run": cmd_run,
    "episode": cmd_episode,
    "bound": cmd_bound,
    "plotdata": cmd_plotdata,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError, yaml.YAMLError, PlannerError) as exc:
        print(f"pbdplan {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception:
        logger.exception("pbdplan %s failed", args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
