import io
from typing import List

from fastapi import APIRouter, Depends, HTTPException, status
from fastapi.responses import PlainTextResponse
from sqlalchemy.orm import Session

from pbdplan import models, schemas
from pbdplan.database import get_db
from pbdplan.harness import emit_plot_data, summarize_records

router = APIRouter(prefix="/analytics", tags=["Analytics"])


def _episodes(db: Session, run_id: int) -> List[models.EpisodeRecord]:
    run = db.query(models.ExperimentRun).filter(models.ExperimentRun.id == run_id).first()
    if not run:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="Experiment run not found"
        )
    return db.query(models.EpisodeRecord).filter(
        models.EpisodeRecord.run_id == run_id
    ).order_by(models.EpisodeRecord.id).all()


@router.get("/{run_id}/summary", response_model=List[schemas.SummaryRow])
def get_run_summary(
    run_id: int,
    db: Session = Depends(get_db)
):
    """
    Mean discounted return, standard error and mean planning time per planner
    """
    return summarize_records(_episodes(db, run_id))


@router.get("/{run_id}/plot-data", response_class=PlainTextResponse)
def get_plot_data(
    run_id: int,
    db: Session = Depends(get_db)
):
    """
    Plot-ready long-format CSV of the run summary
    """
    buffer = io.StringIO()
    emit_plot_data(summarize_records(_episodes(db, run_id)), buffer)
    return PlainTextResponse(buffer.getvalue(), media_type="text/csv")
