"""
Seeded episode runner and experiment driver

Every random draw of an experiment comes from a stream named by the
experiment seed plus a fixed path:

    (seed, 0, scenario)                     initial world state
    (seed, 1, scenario, episode)            execution noise and observations
    (seed, 2, planner seed, scenario, episode, t)  planner at step t

so a rerun with the same file and seed reproduces every result, whatever
order episodes run in.
"""
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import pandas as pd
import yaml
from pydantic import TypeAdapter
from sqlalchemy.orm import Session

from pbdplan.domains import DomainAdapter, IsrsDomain, IsrsSpec, LinearGaussianDomain, LinearSpec, TargetMonitorDomain, TmSpec
from pbdplan.errors import ConfigError
from pbdplan.gaussian import RandomStream, make_rng
from pbdplan.models import EpisodeRecord, ExperimentRun, StepRecord
from pbdplan.planner import make_planner
from pbdplan.schemas import (
    SCHEMA_VERSION,
    EpisodeResult,
    ExperimentConfig,
    PlannerConfig,
    Scenario,
    StepLog,
    SummaryRow,
)

logger = logging.getLogger(__name__)

EPISODE_COLUMNS = ["planner_id", "kind", "depth", "samples", "scenario", "episode", "seed", "steps", "discounted_return"]
SUMMARY_COLUMNS = ["planner_id", "kind", "depth", "samples", "episodes", "mean_return", "std_error", "mean_planning_time"]


# ===== Config files =====

def load_yaml(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
    return data


def load_scenario(path: str | Path) -> Scenario:
    data = load_yaml(path)
    data.pop("schema_version")
    return TypeAdapter(Scenario).validate_python(data)


def load_experiment(path: str | Path) -> ExperimentConfig:
    """
    Read an experiment file

    scenario may be inlined or given as a path to a scenario file, relative
    to the experiment file.
    """
    path = Path(path)
    data = load_yaml(path)
    scenario = data.get("scenario")
    if isinstance(scenario, str):
        scenario_data = load_yaml(path.parent / scenario)
        scenario_data.pop("schema_version")
        data["scenario"] = scenario_data
    return ExperimentConfig.model_validate(data)


def make_domain(scenario: IsrsSpec | TmSpec | LinearSpec) -> DomainAdapter:
    if isinstance(scenario, IsrsSpec):
        return IsrsDomain(scenario)
    if isinstance(scenario, TmSpec):
        return TargetMonitorDomain(scenario)
    if isinstance(scenario, LinearSpec):
        return LinearGaussianDomain.from_spec(scenario)
    raise ConfigError(f"unknown scenario type {type(scenario).__name__}")


# ===== Episodes =====

def run_episode(domain: DomainAdapter, planner_cfg: PlannerConfig, seed: int, scenario: int = 0,
                episode: int = 0, max_steps: int | None = None, record_timing: bool = True) -> EpisodeResult:
    """
    Plan, execute the first action, observe, update; until the episode ends
    or max_steps decisions were made

    Only the planner call is timed. With record_timing=False every planning
    time is 0 and the result is a pure function of the arguments.
    """
    planner = make_planner(planner_cfg, domain)
    planner.reset()
    cap = domain.default_max_steps if max_steps is None else max_steps

    state = domain.initial_state(make_rng(seed, 0, scenario))
    node = domain.initial_node(state, discrete=planner.discrete)
    env_rng = make_rng(seed, 1, scenario, episode)

    steps: list[StepLog] = []
    total = 0.0
    for t in range(cap):
        if domain.is_terminal(node.context):
            break
        stream = RandomStream(seed, (2, planner_cfg.seed, scenario, episode, t))
        start = time.perf_counter()
        action = planner.act(node, stream)
        elapsed = time.perf_counter() - start if record_timing else 0.0

        outcome = domain.execute(state, node, action, env_rng)
        steps.append(StepLog(action=domain.format_action(action), reward=outcome.reward, planning_time=elapsed))
        total += domain.gamma ** t * outcome.reward
        logger.debug("t=%d %s -> reward %.4f", t, domain.format_action(action), outcome.reward)
        state, node = outcome.state, outcome.node
        if outcome.done:
            break

    result = EpisodeResult(
        planner_id=planner_cfg.label,
        kind=planner_cfg.kind,
        depth=planner_cfg.depth,
        samples=planner_cfg.samples,
        scenario=scenario,
        episode=episode,
        seed=seed,
        gamma=domain.gamma,
        discounted_return=total,
        steps=steps,
    )
    logger.info("%s scenario %d episode %d: return %.4f over %d steps",
                result.planner_id, scenario, episode, total, len(steps))
    return result


# ===== Aggregation =====

def _summary_frame(df: pd.DataFrame) -> pd.DataFrame:
    if df.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    grouped = df.groupby("planner_id", sort=False)
    out = grouped.agg(
        kind=("kind", "first"),
        depth=("depth", "first"),
        samples=("samples", "first"),
        episodes=("discounted_return", "size"),
        mean_return=("discounted_return", "mean"),
        std=("discounted_return", "std"),
        mean_planning_time=("mean_planning_time", "mean"),
    ).reset_index()
    out["std_error"] = (out["std"] / out["episodes"].map(math.sqrt)).fillna(0.0)
    return out[SUMMARY_COLUMNS]


def _rows(frame: pd.DataFrame, record_timing: bool) -> list[SummaryRow]:
    rows = []
    for record in frame.to_dict("records"):
        if not record_timing or pd.isna(record["mean_planning_time"]):
            record["mean_planning_time"] = None
        rows.append(SummaryRow(**record))
    return rows


def summarize(results: Sequence[EpisodeResult], record_timing: bool = True) -> list[SummaryRow]:
    """
    One row per planner in first-seen order

    std_error = sample standard deviation / sqrt(episodes), 0 for one episode.
    """
    df = pd.DataFrame([{
        "planner_id": r.planner_id,
        "kind": r.kind.value,
        "depth": r.depth,
        "samples": r.samples,
        "discounted_return": r.discounted_return,
        "mean_planning_time": r.mean_planning_time,
    } for r in results])
    return _rows(_summary_frame(df), record_timing)


def summarize_records(records: Sequence[EpisodeRecord]) -> list[SummaryRow]:
    """Summary rows for stored episodes"""
    df = pd.DataFrame([{
        "planner_id": r.planner_id,
        "kind": r.kind,
        "depth": r.depth,
        "samples": r.samples,
        "discounted_return": r.discounted_return,
        "mean_planning_time": r.mean_planning_time,
    } for r in records])
    return _rows(_summary_frame(df), record_timing=True)


def summary_table(rows: Sequence[SummaryRow]) -> str:
    if not rows:
        return "(no results)"
    frame = pd.DataFrame([r.model_dump(mode="json") for r in rows])
    return frame.to_string(index=False)


# ===== Output files =====

def _summary_frame_from_rows(rows: Sequence[SummaryRow]) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump(mode="json") for r in rows], columns=SUMMARY_COLUMNS)
    if frame["mean_planning_time"].isna().all():
        frame = frame.drop(columns="mean_planning_time")
    return frame


def write_episodes(results: Sequence[EpisodeResult], path: Path) -> None:
    """Per-episode CSV; never carries timings so reruns are byte-identical"""
    frame = pd.DataFrame([{
        "planner_id": r.planner_id,
        "kind": r.kind.value,
        "depth": r.depth,
        "samples": r.samples,
        "scenario": r.scenario,
        "episode": r.episode,
        "seed": str(r.seed),
        "steps": len(r.steps),
        "discounted_return": r.discounted_return,
    } for r in results], columns=EPISODE_COLUMNS)
    frame.to_csv(path, index=False)


def emit_plot_data(rows: Sequence[SummaryRow], path: str | Path) -> pd.DataFrame:
    """
    Long-format plot table: one row per planner configuration, sorted by
    kind, depth and samples so depth and sample sweeps read as curves

    No results gives a header-only file. Timings appear only when the rows
    carry them.
    """
    frame = _summary_frame_from_rows(rows)
    if not frame.empty:
        frame = frame.sort_values(["kind", "depth", "samples", "planner_id"], kind="stable")
    frame.to_csv(path, index=False)
    return frame


def read_summary(path: str | Path) -> list[SummaryRow]:
    """Summary rows back from summary.csv or plot_data.csv"""
    frame = pd.read_csv(path, float_precision="round_trip", dtype={"planner_id": str, "kind": str})
    if "mean_planning_time" not in frame.columns:
        frame["mean_planning_time"] = float("nan")
    return _rows(frame, record_timing=True)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    results: list[EpisodeResult]
    summary: list[SummaryRow]
    output_dir: Path | None = None


def run_experiment(cfg: ExperimentConfig, output_dir: str | Path | None = None, write: bool = True) -> ExperimentReport:
    """
    Run every planner on every initial condition and repetition

    Writes episodes.csv, summary.csv and summary.json to output_dir
    (cfg.output_dir when not given) unless write is False.
    """
    domain = make_domain(cfg.scenario)
    logger.info("experiment %s: %d planners x %d scenarios x %d episodes on %s",
                cfg.name, len(cfg.planners), cfg.scenarios, cfg.episodes, domain.name)
    results = [
        run_episode(domain, planner_cfg, cfg.seed, scenario, episode, cfg.max_steps, cfg.record_timing)
        for planner_cfg in cfg.planners
        for scenario in range(cfg.scenarios)
        for episode in range(cfg.episodes)
    ]
    summary = summarize(results, cfg.record_timing)
    report = ExperimentReport(cfg, results, summary)
    if write:
        report.output_dir = write_report(report, Path(output_dir or cfg.output_dir))
    for row in summary:
        logger.info("%s: mean %.4f +- %.4f over %d episodes", row.planner_id, row.mean_return, row.std_error, row.episodes)
    return report


def write_report(report: ExperimentReport, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_episodes(report.results, out_dir / "episodes.csv")
    _summary_frame_from_rows(report.summary).to_csv(out_dir / "summary.csv", index=False)
    document = {
        "schema_version": SCHEMA_VERSION,
        "name": report.config.name,
        "domain": report.config.scenario.domain,
        "seed": str(report.config.seed),
        "summary": [r.model_dump(mode="json", exclude_none=True) for r in report.summary],
    }
    (out_dir / "summary.json").write_text(json.dumps(document, indent=2) + "\n")
    logger.info("results written to %s", out_dir)
    return out_dir


# ===== Results store =====

def store_results(db: Session, report: ExperimentReport) -> ExperimentRun:
    """Persist a finished experiment with all episodes and steps"""
    cfg = report.config
    run = ExperimentRun(
        name=cfg.name,
        domain=cfg.scenario.domain,
        seed=str(cfg.seed),
        config_yaml=yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False),
    )
    for result in report.results:
        episode = EpisodeRecord(
            planner_id=result.planner_id,
            kind=result.kind.value,
            depth=result.depth,
            samples=result.samples,
            scenario=result.scenario,
            episode=result.episode,
            seed=str(result.seed),
            gamma=result.gamma,
            discounted_return=result.discounted_return,
            mean_planning_time=result.mean_planning_time,
        )
        episode.steps = [
            StepRecord(t=t, action=s.action, reward=s.reward, planning_time=s.planning_time)
            for t, s in enumerate(result.steps)
        ]
        run.episodes.append(episode)
    db.add(run)
    db.commit()
    db.refresh(run)
    logger.info("stored experiment %s as run %d", cfg.name, run.id)
    return run
