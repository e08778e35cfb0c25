import numpy as np
import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from pbdplan import models  # noqa: F401  registers the tables on Base
from pbdplan.belief import LinearDynamics, LinearGaussianObservation
from pbdplan.database import Base, get_db
from pbdplan.domains import IsrsDomain, IsrsSpec, LinearGaussianDomain
from pbdplan.gaussian import Gaussian
from pbdplan.main import app
from pbdplan.rewards import ANY_ACTION, GaussianMixtureReward, MixtureComponent


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def goal_reward():
    """Bump of height 10 around s = 3, whatever the action"""
    return GaussianMixtureReward({ANY_ACTION: [MixtureComponent(10.0, [3.0], [[1.0]])]})


@pytest.fixture
def linear_domain(goal_reward):
    """1-D random walk steered left/right, observed with noise"""
    return LinearGaussianDomain(
        dynamics=LinearDynamics([[1.0]], [[1.0]], [[0.1]]),
        observation=LinearGaussianObservation([[1.0]], [[0.5]]),
        controls={"left": [-1.0], "right": [1.0]},
        reward=goal_reward,
        initial_belief=Gaussian([0.0], [[1.0]]),
        gamma=0.9,
    )


@pytest.fixture
def isrs_spec():
    return IsrsSpec(
        n=5,
        rocks=[(1, 1), (3, 2)],
        beacons=[(0, 2), (4, 4)],
        rock_values=[1, 0],
    )


@pytest.fixture
def isrs_domain(isrs_spec):
    return IsrsDomain(isrs_spec)


@pytest.fixture
def db_session():
    engine = create_engine(
        "sqlite://",
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
    Base.metadata.create_all(bind=engine)
    TestingSession = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    session = TestingSession()
    try:
        yield session
    finally:
        session.close()
        engine.dispose()


@pytest.fixture
def client(db_session):
    def override_get_db():
        yield db_session

    app.dependency_overrides[get_db] = override_get_db
    try:
        yield TestClient(app)
    finally:
        app.dependency_overrides.clear()
