"""Request schemas for the simulator API."""

from typing import List, Optional

from pydantic import BaseModel, Field


class ConfigRequest(BaseModel):
    config_text: str = ""
    overrides: List[str] = Field(default_factory=list)


class SimulationRequest(ConfigRequest):
    x0: Optional[List[float]] = None
    theta_hat0: Optional[List[float]] = None
    seed: Optional[int] = Field(default=None, ge=0)
    include_rows: bool = False


class MonteCarloRequest(ConfigRequest):
    laws: Optional[List[str]] = None
    runs: Optional[int] = Field(default=None, ge=1, le=200)
    include_curves: bool = True


class SweepRequest(ConfigRequest):
    theta_hat0: Optional[List[List[float]]] = None
    laws: Optional[List[str]] = None


class EpsSweepRequest(ConfigRequest):
    eps_values: Optional[List[float]] = None
    theta_hat0: Optional[List[float]] = None


class GammaRequest(ConfigRequest):
    delta: float = Field(ge=0)
