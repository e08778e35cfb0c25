import logging
from typing import List

from fastapi import APIRouter, Depends, HTTPException, Query, status
from sqlalchemy.orm import Session

from pbdplan import models, schemas
from pbdplan.database import get_db
from pbdplan.errors import PlannerError
from pbdplan.harness import run_experiment, store_results

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/experiments", tags=["Experiments"])


@router.post("/", response_model=schemas.ExperimentRunResponse, status_code=status.HTTP_201_CREATED)
def create_experiment(
    config: schemas.ExperimentConfig,
    db: Session = Depends(get_db)
):
    """
    Run an experiment and store its episodes

    Runs synchronously; keep request-sized experiments small.
    Nothing is written to disk, results live in the database.
    """
    try:
        report = run_experiment(config, write=False)
    except PlannerError as exc:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=str(exc)
        )
    return store_results(db, report)


@router.get("/", response_model=List[schemas.ExperimentRunResponse])
def get_experiments(
    skip: int = Query(0, ge=0),
    limit: int = Query(100, ge=1, le=100),
    domain: str | None = None,
    db: Session = Depends(get_db)
):
    """
    List stored runs, newest first

    Query parameters:
    - skip: number of records to skip (for pagination)
    - limit: max records to return (1-100)
    - domain: only runs on this domain (optional)
    """
    query = db.query(models.ExperimentRun)
    if domain:
        query = query.filter(models.ExperimentRun.domain == domain)
    query = query.order_by(models.ExperimentRun.id.desc())
    return query.offset(skip).limit(limit).all()


def _get_run(db: Session, run_id: int) -> models.ExperimentRun:
    run = db.query(models.ExperimentRun).filter(models.ExperimentRun.id == run_id).first()
    if not run:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="Experiment run not found"
        )
    return run


@router.get("/{run_id}", response_model=schemas.ExperimentRunDetail)
def get_experiment(
    run_id: int,
    db: Session = Depends(get_db)
):
    """
    Get a stored run with its episodes
    """
    return _get_run(db, run_id)


@router.delete("/{run_id}", status_code=status.HTTP_204_NO_CONTENT)
def delete_experiment(
    run_id: int,
    db: Session = Depends(get_db)
):
    """
    Delete a run; its episodes and steps go with it
    """
    run = _get_run(db, run_id)
    db.delete(run)
    db.commit()
    logger.info("deleted experiment run %d", run_id)
    return None
