import logging
from contextlib import asynccontextmanager

from fastapi import Depends, FastAPI
from sqlalchemy import text
from sqlalchemy.orm import Session

from pbdplan import models  # noqa: F401  registers the tables on Base
from pbdplan.config import configure_logging
from pbdplan.database import Base, engine, get_db
from pbdplan.routers import analytics, bound, experiments
from pbdplan.schemas import ALLOWED_KINDS

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    configure_logging()
    # Create all database tables based on models
    Base.metadata.create_all(bind=engine)
    logger.info("results store ready")
    yield


# Create FastAPI application
app = FastAPI(
    title="PBD Planner API",
    description="Macro-action belief-space planning experiments with a results store",
    version="1.0.0",
    lifespan=lifespan,
)

# Include routers - organizes endpoints by feature
app.include_router(experiments.router)
app.include_router(analytics.router)
app.include_router(bound.router)

# Root endpoint
@app.get("/")
def root():
    return {
        "message": "Welcome to the PBD Planner API",
        "docs": "Visit /docs for interactive API documentation",
        "domains": sorted(ALLOWED_KINDS),
    }

# Health check endpoint - runs a trivial query against the results store
@app.get("/health")
def health_check(db: Session = Depends(get_db)):
    db.execute(text("SELECT 1"))
    return {"status": "healthy", "database": "connected"}
