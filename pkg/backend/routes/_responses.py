"""Shared route response helpers."""

import math
from typing import Any, Dict, Iterable

import numpy as np
import pandas as pd
from fastapi import HTTPException

from backend.schemas import ConfigRequest
from sim_config import ConfigError, SimConfig, parse_config


def require_success(result: Dict[str, Any], status_code: int = 400) -> Dict[str, Any]:
    """Raise an HTTP error when a service result reports failure."""
    if not result.get("success"):
        raise HTTPException(status_code=status_code, detail=result.get("error", "Request failed"))
    return result


def resolve_config(request: ConfigRequest, extra: Iterable[str] = ()) -> SimConfig:
    try:
        return parse_config(request.config_text, [*request.overrides, *extra])
    except ConfigError as error:
        raise HTTPException(status_code=422, detail=str(error)) from error


def json_safe(value: Any) -> Any:
    """Plain JSON values; NaN and infinities become null."""
    if isinstance(value, dict):
        return {str(key): json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    if isinstance(value, pd.DataFrame):
        return json_safe(value.to_dict(orient="list"))
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value
