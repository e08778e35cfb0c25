from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func

from pbdplan.database import Base


class ExperimentRun(Base):
    """
    Experiment run table - one row per stored run_experiment call
    """
    __tablename__ = "experiment_runs"

    # Columns
    id = Column(Integer, primary_key=True, index=True)
    name = Column(String, nullable=False)
    domain = Column(String, nullable=False)  # 'isrs', 'target_monitor' or 'linear'
    seed = Column(String, nullable=False)  # 64-bit seeds overflow SQLite integers
    config_yaml = Column(Text, nullable=False)  # Full ExperimentConfig as submitted
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    # Relationships - deleting a run deletes its episodes
    episodes = relationship("EpisodeRecord", back_populates="run", cascade="all, delete-orphan")

    @property
    def episode_count(self) -> int:
        return len(self.episodes)


class EpisodeRecord(Base):
    """
    Episode table - one seeded rollout of one planner
    """
    __tablename__ = "episode_records"

    # Columns
    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("experiment_runs.id", ondelete="CASCADE"), nullable=False)
    planner_id = Column(String, nullable=False)  # e.g. "PBD(d3,s10)"
    kind = Column(String, nullable=False)
    depth = Column(Integer, nullable=False)
    samples = Column(Integer, nullable=False)
    scenario = Column(Integer, nullable=False)
    episode = Column(Integer, nullable=False)
    seed = Column(String, nullable=False)
    gamma = Column(Float, nullable=False)
    discounted_return = Column(Float, nullable=False)
    mean_planning_time = Column(Float, nullable=False)

    # Relationships
    run = relationship("ExperimentRun", back_populates="episodes")
    steps = relationship("StepRecord", back_populates="episode", cascade="all, delete-orphan",
                         order_by="StepRecord.t")


class StepRecord(Base):
    """
    Step table - action, reward and planning time of one decision
    """
    __tablename__ = "step_records"

    # Columns
    id = Column(Integer, primary_key=True, index=True)
    episode_id = Column(Integer, ForeignKey("episode_records.id", ondelete="CASCADE"), nullable=False)
    t = Column(Integer, nullable=False)  # Step index within the episode
    action = Column(String, nullable=False)
    reward = Column(Float, nullable=False)
    planning_time = Column(Float, nullable=False)

    # Relationships
    episode = relationship("EpisodeRecord", back_populates="steps")
