"""CSV and manifest persistence for experiment outputs.

Numbers are written with 17 significant digits through %-formatting, which
ignores the process locale, so reruns with the same config and seed produce
byte-identical files.
"""

import json
import os
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field

from sim_engine import EpsSweepRecord, MonteCarloSummary, SweepRecord, Trajectory

TOOL_VERSION = "0.1.0"
FLOAT_FORMAT = "%.17g"

TRAJECTORY_FILE = "trajectory.csv"
SWEEP_FILE = "sweep.csv"
EPS_SWEEP_FILE = "eps_sweep.csv"
MANIFEST_FILE = "manifest.json"

SWEEP_COLUMNS = ["law", "that0_1", "that0_2", "min_psi0", "max_ttil", "final_x_norm"]
EPS_SWEEP_COLUMNS = ["eps_h", "min_psi0", "gamma1", "delta_hat", "max_u_norm", "final_x_norm"]


class RunManifest(BaseModel):
    """What one CLI invocation produced and how to reproduce it."""

    command: str
    config: str
    seed: int
    tool_version: str = TOOL_VERSION
    outputs: List[str] = Field(default_factory=list)
    duration_s: float = 0.0
    status: str = "ok"
    partial: bool = False
    error: Optional[str] = None
    monitors: Dict[str, Any] = Field(default_factory=dict)
    created_at: str = Field(default_factory=lambda: datetime.now().isoformat())


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_frame(frame: pd.DataFrame, path: str) -> str:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    return path


def save_trajectory(trajectory: Trajectory, out_dir: str, filename: str = TRAJECTORY_FILE) -> str:
    return write_frame(trajectory.frame(), os.path.join(ensure_dir(out_dir), filename))


def save_montecarlo(summary: MonteCarloSummary, out_dir: str) -> List[str]:
    """summary_<law>.csv and runs_<law>.csv."""
    ensure_dir(out_dir)
    law = summary.law.value
    return [
        write_frame(summary.curves, os.path.join(out_dir, f"summary_{law}.csv")),
        write_frame(summary.runs, os.path.join(out_dir, f"runs_{law}.csv")),
    ]


def sweep_frame(records: Sequence[SweepRecord]) -> pd.DataFrame:
    rows = []
    for record in records:
        theta = list(record.theta_hat0)
        rows.append({
            "law": record.law.value,
            "that0_1": theta[0],
            "that0_2": theta[1] if len(theta) > 1 else float("nan"),
            "min_psi0": record.min_psi0,
            "max_ttil": record.max_ttil,
            "final_x_norm": record.final_x_norm,
        })
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def save_sweep(records: Sequence[SweepRecord], out_dir: str) -> str:
    return write_frame(sweep_frame(records), os.path.join(ensure_dir(out_dir), SWEEP_FILE))


def eps_sweep_frame(records: Sequence[EpsSweepRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [{column: getattr(record, column) for column in EPS_SWEEP_COLUMNS} for record in records],
        columns=EPS_SWEEP_COLUMNS,
    )


def save_eps_sweep(records: Sequence[EpsSweepRecord], out_dir: str) -> str:
    return write_frame(eps_sweep_frame(records), os.path.join(ensure_dir(out_dir), EPS_SWEEP_FILE))


def save_manifest(manifest: RunManifest, out_dir: str) -> str:
    path = os.path.join(ensure_dir(out_dir), MANIFEST_FILE)
    with open(path, "w", encoding="utf-8") as file:
        json.dump(manifest.model_dump(), file, indent=2)
    return path


def load_manifest(path: str) -> RunManifest:
    with open(path, "r", encoding="utf-8") as file:
        return RunManifest.model_validate(json.load(file))


__all__ = [
    "EPS_SWEEP_COLUMNS",
    "FLOAT_FORMAT",
    "MANIFEST_FILE",
    "RunManifest",
    "SWEEP_COLUMNS",
    "TOOL_VERSION",
    "eps_sweep_frame",
    "load_manifest",
    "save_eps_sweep",
    "save_manifest",
    "save_montecarlo",
    "save_sweep",
    "save_trajectory",
    "sweep_frame",
    "write_frame",
]
