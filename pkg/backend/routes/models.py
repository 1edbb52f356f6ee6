"""Model registry routes."""

from fastapi import APIRouter

from dynamics_models import MODEL_REGISTRY, get_model
from estimation_engine import GainLaw

router = APIRouter(prefix="/models", tags=["models"])


@router.get("")
def list_models():
    models = []
    for name in sorted(MODEL_REGISTRY):
        sys = get_model(name)
        models.append({"name": name, "n": sys.n, "m": sys.m, "p": sys.p, "state_labels": list(sys.labels())})
    return {"models": models, "laws": [law.value for law in GainLaw]}
