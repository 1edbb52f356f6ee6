"""Experiment configuration: pydantic models plus a dotted key-value text format.

Grammar (one setting per line, `#` starts a comment):

    section.key = value

Vectors are comma lists (`system.true_theta = 0.8, 1.4`), sampling boxes are
`lo:hi` per coordinate (`experiment.theta_hat0_box = 0:3, 0:3`) and lists of
vectors separate the vectors with `;`. An empty value clears an optional key.
"""

import os
from typing import Any, Dict, Iterable, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from dynamics_models import MODEL_REGISTRY, get_model
from estimation_engine import GainLaw

load_dotenv()

DEFAULT_OUT_DIR = os.getenv("ADAPTIVE_SAFETY_OUT_DIR", "results")


class ConfigError(ValueError):
    """Raised for unknown keys or values that fail validation."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


Vector = Tuple[float, ...]
Box = Tuple[Tuple[float, float], ...]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SystemSettings(_Section):
    model: str = "double_integrator_drag"
    true_theta: Vector = (0.8, 1.4)

    @field_validator("model")
    @classmethod
    def _known_model(cls, value: str) -> str:
        if value not in MODEL_REGISTRY:
            raise ValueError(f"unknown model '{value}'")
        return value


class SimSettings(_Section):
    dt: float = Field(default=1e-3, gt=0)
    horizon: float = Field(default=20.0, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    runs: int = Field(default=25, ge=1)


class EstimatorSettings(_Section):
    law: GainLaw = GainLaw.RLS_FORGET
    N: int = Field(default=20, ge=1)
    gamma0: float = Field(default=100.0, gt=0)
    beta: float = Field(default=1.0, gt=0)
    gamma_bar: float = Field(default=1000.0, gt=0)
    window_dt: float = Field(default=0.1, gt=0)


class ClfSettings(_Section):
    c3: float = Field(default=1.0, gt=0)
    eps_v: float = Field(default=20.0, gt=0)


class CbfSettings(_Section):
    enabled: bool = True
    eps_h: float = Field(default=1.0, gt=0)
    alpha1_lambda: float = Field(default=1.0, gt=0)
    alpha2_lambda: float = Field(default=0.5, gt=0)
    obstacle_center: Vector = (-1.0, 1.0)
    obstacle_radius: float = Field(default=0.5, gt=0)
    margin: float = Field(default=0.0, ge=0)


class ExperimentSettings(_Section):
    x0: Optional[Vector] = None
    theta_hat0: Optional[Vector] = None
    x0_box: Box = ((-2.2, -1.8), (1.8, 2.2), (0.0, 0.0), (0.0, 0.0))
    theta_hat0_box: Box = ((0.0, 3.0), (0.0, 3.0))
    laws: Tuple[GainLaw, ...] = (GainLaw.GD, GainLaw.RLS, GainLaw.RLS_FORGET, GainLaw.RLS_VARFORGET)

    @field_validator("x0_box", "theta_hat0_box")
    @classmethod
    def _ordered_box(cls, value: Box) -> Box:
        for lo, hi in value:
            if lo > hi:
                raise ValueError(f"box interval {lo}:{hi} has lo > hi")
        return value


class SweepSettings(_Section):
    theta_hat0: Tuple[Vector, ...] = ((0.8, 1.4), (1.5, 1.5), (3.0, 3.0), (0.0, 3.0))
    laws: Tuple[GainLaw, ...] = (GainLaw.GD, GainLaw.RLS_FORGET)


class EpsSweepSettings(_Section):
    values: Vector = (4.0, 1.0, 0.25, 0.0625)


class SimConfig(_Section):
    system: SystemSettings = SystemSettings()
    sim: SimSettings = SimSettings()
    estimator: EstimatorSettings = EstimatorSettings()
    clf: ClfSettings = ClfSettings()
    cbf: CbfSettings = CbfSettings()
    experiment: ExperimentSettings = ExperimentSettings()
    sweep: SweepSettings = SweepSettings()
    eps_sweep: EpsSweepSettings = EpsSweepSettings()

    @model_validator(mode="after")
    def _consistent(self) -> "SimConfig":
        sys = get_model(self.system.model)
        if not 0.0 < self.sim.dt < self.estimator.window_dt < self.sim.horizon:
            raise ValueError("need 0 < sim.dt < estimator.window_dt < sim.horizon")
        if len(self.system.true_theta) != sys.p:
            raise ValueError(f"system.true_theta must have {sys.p} entries")
        if len(self.experiment.x0_box) != sys.n:
            raise ValueError(f"experiment.x0_box must have {sys.n} intervals")
        if len(self.experiment.theta_hat0_box) != sys.p:
            raise ValueError(f"experiment.theta_hat0_box must have {sys.p} intervals")
        if self.experiment.x0 is not None and len(self.experiment.x0) != sys.n:
            raise ValueError(f"experiment.x0 must have {sys.n} entries")
        if self.experiment.theta_hat0 is not None and len(self.experiment.theta_hat0) != sys.p:
            raise ValueError(f"experiment.theta_hat0 must have {sys.p} entries")
        if any(len(vector) != sys.p for vector in self.sweep.theta_hat0):
            raise ValueError(f"sweep.theta_hat0 vectors must have {sys.p} entries")
        if len(self.cbf.obstacle_center) != 2:
            raise ValueError("cbf.obstacle_center must have 2 entries")
        if any(value <= 0.0 for value in self.eps_sweep.values):
            raise ValueError("eps_sweep.values must be positive")
        if not self.experiment.laws or not self.sweep.laws:
            raise ValueError("law lists must not be empty")
        return self

    @property
    def steps(self) -> int:
        return int(round(self.sim.horizon / self.sim.dt))


# ======================================================
# 1. TEXT FORMAT
# ======================================================
_KINDS: Dict[str, str] = {
    "system.true_theta": "vector",
    "cbf.obstacle_center": "vector",
    "experiment.x0": "optional_vector",
    "experiment.theta_hat0": "optional_vector",
    "experiment.x0_box": "box",
    "experiment.theta_hat0_box": "box",
    "experiment.laws": "list",
    "sweep.theta_hat0": "vector_list",
    "sweep.laws": "list",
    "eps_sweep.values": "vector",
}


def known_keys() -> List[str]:
    keys = []
    for section, section_field in SimConfig.model_fields.items():
        for name in section_field.annotation.model_fields:
            keys.append(f"{section}.{name}")
    return keys


def _split(raw: str, sep: str) -> List[str]:
    return [item.strip() for item in raw.split(sep) if item.strip()]


def _convert(key: str, raw: str) -> Any:
    kind = _KINDS.get(key, "scalar")
    raw = raw.strip()
    if kind == "scalar":
        return raw
    if kind == "optional_vector":
        return tuple(_split(raw, ",")) if raw else None
    if kind in ("vector", "list"):
        return tuple(_split(raw, ","))
    if kind == "box":
        intervals = []
        for item in _split(raw, ","):
            bounds = item.split(":")
            if len(bounds) != 2:
                raise ConfigError(key, f"box interval '{item}' must be written lo:hi")
            intervals.append((bounds[0].strip(), bounds[1].strip()))
        return tuple(intervals)
    return tuple(tuple(_split(vector, ",")) for vector in _split(raw, ";"))


def parse_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    """Collect `key = value` assignments; later assignments win."""
    values: Dict[str, str] = {}
    for number, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{number}", f"expected 'key = value', got '{text}'")
        key, value = text.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_config(values: Dict[str, str]) -> SimConfig:
    """Validate flat dotted assignments into a SimConfig."""
    allowed = set(known_keys())
    nested: Dict[str, Dict[str, Any]] = {}
    for key, raw in values.items():
        if key not in allowed:
            raise ConfigError(key, "unknown configuration key")
        section, name = key.split(".", 1)
        nested.setdefault(section, {})[name] = _convert(key, raw)
    try:
        return SimConfig.model_validate(nested)
    except ValidationError as error:
        first = error.errors()[0]
        location = ".".join(str(part) for part in first["loc"] if not isinstance(part, int)) or "config"
        raise ConfigError(location, first["msg"]) from error


def parse_overrides(assignments: Iterable[str]) -> Dict[str, str]:
    values = {}
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(assignment, "override must be written key=value")
        key, value = assignment.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def parse_config(text: str, overrides: Iterable[str] = ()) -> SimConfig:
    values = parse_lines(text.splitlines())
    values.update(parse_overrides(overrides))
    return build_config(values)


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> SimConfig:
    """Read a config file (defaults when path is None) and apply --set overrides."""
    text = ""
    if path:
        try:
            with open(path, "r", encoding="utf-8") as file:
                text = file.read()
        except OSError as error:
            raise ConfigError(str(path), f"cannot read config file ({error.strerror})") from error
        except UnicodeDecodeError as error:
            raise ConfigError(str(path), f"config file is not valid UTF-8 (byte {error.start})") from error
    return parse_config(text, overrides)


def _format_scalar(value: Any) -> str:
    if isinstance(value, GainLaw):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _format_value(key: str, value: Any) -> str:
    kind = _KINDS.get(key, "scalar")
    if value is None:
        return ""
    if kind == "scalar":
        return _format_scalar(value)
    if kind == "box":
        return ", ".join(f"{_format_scalar(lo)}:{_format_scalar(hi)}" for lo, hi in value)
    if kind == "vector_list":
        return "; ".join(", ".join(_format_scalar(item) for item in vector) for vector in value)
    return ", ".join(_format_scalar(item) for item in value)


def dump_config(config: SimConfig) -> str:
    """Every resolved key, in a form parse_config reads back to an equal config."""
    lines = []
    for section in SimConfig.model_fields:
        settings = getattr(config, section)
        for name in type(settings).model_fields:
            key = f"{section}.{name}"
            lines.append(f"{key} = {_format_value(key, getattr(settings, name))}")
    return "\n".join(lines) + "\n"


def with_overrides(config: SimConfig, **sections: Dict[str, Any]) -> SimConfig:
    """Copy of config with section fields replaced, re-validated."""
    data = config.model_dump()
    for section, updates in sections.items():
        data[section].update(updates)
    try:
        return SimConfig.model_validate(data)
    except ValidationError as error:
        first = error.errors()[0]
        location = ".".join(str(part) for part in first["loc"] if not isinstance(part, int)) or "config"
        raise ConfigError(location, first["msg"]) from error


__all__ = [
    "CbfSettings",
    "ClfSettings",
    "ConfigError",
    "DEFAULT_OUT_DIR",
    "EpsSweepSettings",
    "EstimatorSettings",
    "ExperimentSettings",
    "SimConfig",
    "SimSettings",
    "SweepSettings",
    "SystemSettings",
    "build_config",
    "dump_config",
    "known_keys",
    "load_config",
    "parse_config",
    "parse_overrides",
    "with_overrides",
]
