from datetime import datetime
from enum import Enum
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from pbdplan.domains.isrs import IsrsSpec
from pbdplan.domains.linear import LinearSpec
from pbdplan.domains.target_monitor import TmSpec

SCHEMA_VERSION = 1

# ===== Planner Schemas =====

class PlannerKind(str, Enum):
    PBD = "PBD"
    MAC = "MAC"
    MAD = "MAD"
    NBO = "NBO"
    OPEN_LOOP = "OPEN_LOOP"
    GREEDY = "GREEDY"
    WT_SINGLE = "WT_SINGLE"
    WT_MACRO = "WT_MACRO"


SEARCH_KINDS = {PlannerKind.PBD, PlannerKind.MAC, PlannerKind.MAD, PlannerKind.NBO, PlannerKind.OPEN_LOOP}


class PlannerConfig(BaseModel):
    """
    One planner as used in an experiment
    gamma left empty means the domain's own discount
    """
    model_config = ConfigDict(frozen=True)

    kind: PlannerKind
    name: Optional[str] = None  # Row label; defaults to e.g. "PBD(d3,s10)"
    gamma: Optional[float] = Field(None, gt=0.0, le=1.0)
    depth: int = Field(2, ge=1)  # Macro-action search depth
    samples: int = Field(10, ge=1)  # Posterior beliefs / observation sequences per macro
    seed: int = Field(0, ge=0, lt=2 ** 64)
    require_action_coverage: bool = False

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind in (PlannerKind.PBD, PlannerKind.MAC, PlannerKind.MAD):
            return f"{self.kind.value}(d{self.depth},s{self.samples})"
        if self.kind in (PlannerKind.NBO, PlannerKind.OPEN_LOOP):
            return f"{self.kind.value}(d{self.depth})"
        return self.kind.value


class BoundInputs(BaseModel):
    """
    Inputs of the sampling error bound
    gamma = 1 is accepted here and rejected by the bound itself
    """
    gamma: float = Field(gt=0.0, le=1.0)
    horizon: int = Field(ge=1)  # Macro-action search depth
    samples: int = Field(ge=1)
    max_macros: int = Field(ge=1)  # Largest macro set at any node
    delta: float
    v_max: float = Field(ge=0.0)


class BoundResponse(BoundInputs):
    epsilon: float


# ===== Experiment Schemas =====

Scenario = Annotated[Union[IsrsSpec, TmSpec, LinearSpec], Field(discriminator="domain")]

ALLOWED_KINDS = {
    "linear": {PlannerKind.PBD, PlannerKind.MAC, PlannerKind.NBO, PlannerKind.OPEN_LOOP, PlannerKind.GREEDY},
    "isrs": {PlannerKind.PBD, PlannerKind.MAC, PlannerKind.MAD, PlannerKind.NBO, PlannerKind.OPEN_LOOP,
             PlannerKind.GREEDY},
    "target_monitor": {PlannerKind.PBD, PlannerKind.MAC, PlannerKind.NBO, PlannerKind.OPEN_LOOP,
                       PlannerKind.GREEDY, PlannerKind.WT_SINGLE, PlannerKind.WT_MACRO},
}


class ExperimentConfig(BaseModel):
    """
    Planner x initial condition x repetition grid on one domain
    Every initial condition gets its own world seed; repetitions reuse it
    with different execution noise.
    """
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = "experiment"
    scenario: Scenario
    planners: list[PlannerConfig] = Field(min_length=1)
    scenarios: int = Field(1, ge=1)  # Initial conditions
    episodes: int = Field(1, ge=1)  # Repetitions per initial condition
    max_steps: Optional[int] = Field(None, ge=0)  # None means the domain default
    seed: int = Field(0, ge=0, lt=2 ** 64)
    output_dir: str = "results"
    record_timing: bool = True

    @model_validator(mode="after")
    def check_planners(self) -> "ExperimentConfig":
        allowed = ALLOWED_KINDS[self.scenario.domain]
        for planner in self.planners:
            if planner.kind not in allowed:
                raise ValueError(f"{planner.kind.value} planner cannot run on the {self.scenario.domain} domain")
        labels = [p.label for p in self.planners]
        if len(set(labels)) != len(labels):
            raise ValueError("planner labels must be unique; set name on duplicates")
        return self


# ===== Result Schemas =====

class StepLog(BaseModel):
    action: str
    reward: float
    planning_time: float  # Seconds spent choosing the action


class EpisodeResult(BaseModel):
    """
    One seeded rollout
    discounted_return must match the step log
    """
    planner_id: str
    kind: PlannerKind
    depth: int
    samples: int
    scenario: int = 0
    episode: int = 0
    seed: int
    gamma: float
    discounted_return: float
    steps: list[StepLog] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_return(self) -> "EpisodeResult":
        recomputed = sum(self.gamma ** t * s.reward for t, s in enumerate(self.steps))
        if abs(recomputed - self.discounted_return) > 1e-9 * max(1.0, abs(recomputed)):
            raise ValueError(f"discounted return {self.discounted_return} disagrees with step log ({recomputed})")
        return self

    @property
    def mean_planning_time(self) -> float:
        if not self.steps:
            return 0.0
        return sum(s.planning_time for s in self.steps) / len(self.steps)


class SummaryRow(BaseModel):
    """
    Aggregate of one planner's episodes
    std_error is the sample standard deviation over sqrt(episodes), 0 for one episode
    """
    planner_id: str
    kind: PlannerKind
    depth: int
    samples: int
    episodes: int
    mean_return: float
    std_error: float
    mean_planning_time: Optional[float] = None


# ===== Results Store Schemas =====

class ExperimentRunResponse(BaseModel):
    """
    Schema for returning a stored experiment run
    """
    id: int
    name: str
    domain: str
    seed: int
    created_at: datetime
    episode_count: int

    model_config = ConfigDict(from_attributes=True)


class EpisodeRecordResponse(BaseModel):
    id: int
    planner_id: str
    kind: str
    depth: int
    samples: int
    scenario: int
    episode: int
    seed: int
    discounted_return: float
    mean_planning_time: float

    model_config = ConfigDict(from_attributes=True)


class ExperimentRunDetail(ExperimentRunResponse):
    """
    Run plus its episodes
    """
    episodes: list[EpisodeRecordResponse]
