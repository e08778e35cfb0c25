from fastapi import APIRouter, HTTPException, Query, status

from pbdplan import schemas
from pbdplan.errors import InvalidInput
from pbdplan.planner import epsilon_bound

router = APIRouter(prefix="/bound", tags=["Bound"])


@router.get("/", response_model=schemas.BoundResponse)
def get_bound(
    gamma: float = Query(..., gt=0.0, le=1.0),
    horizon: int = Query(..., ge=1),
    samples: int = Query(..., ge=1),
    max_macros: int = Query(..., ge=1),
    delta: float = Query(...),
    v_max: float = Query(..., ge=0.0)
):
    """
    Sampling error bound of the PBD value for a search configuration

    Holds with probability at least 1 - delta.
    """
    inputs = schemas.BoundInputs(
        gamma=gamma, horizon=horizon, samples=samples, max_macros=max_macros, delta=delta, v_max=v_max
    )
    try:
        epsilon = epsilon_bound(inputs)
    except InvalidInput as exc:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=str(exc)
        )
    return {**inputs.model_dump(), "epsilon": epsilon}
