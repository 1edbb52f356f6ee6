"""Simulation, batch experiment and inflation-level routes."""

from fastapi import APIRouter, HTTPException

from backend.routes._responses import json_safe, require_success, resolve_config
from backend.schemas import EpsSweepRequest, GammaRequest, MonteCarloRequest, SimulationRequest, SweepRequest
from dynamics_models import ContractViolation
from services.experiment_service import (
    montecarlo_checks,
    run_eps_sweep,
    run_montecarlo,
    run_sweep,
    sweep_ordering_holds,
)
from services.simulation_service import inflation_levels, run_simulation
from sim_config import dump_config

router = APIRouter(prefix="/simulation", tags=["simulation"])


@router.post("/run")
def simulate_run(request: SimulationRequest):
    config = resolve_config(request)
    result = run_simulation(config, x0=request.x0, theta_hat0=request.theta_hat0, seed=request.seed)
    trajectory = result.pop("trajectory")
    if trajectory is None:
        require_success(result)
    if request.include_rows and trajectory is not None:
        result["rows"] = trajectory.frame()
    result["config"] = dump_config(config)
    return json_safe(result)


@router.post("/montecarlo")
def simulate_montecarlo(request: MonteCarloRequest):
    extra = [] if request.runs is None else [f"sim.runs={request.runs}"]
    config = resolve_config(request, extra)
    try:
        # in-process batch
        summaries = run_montecarlo(config, laws=request.laws, workers=1)
    except ContractViolation as error:
        raise HTTPException(status_code=400, detail=str(error)) from error
    laws = {}
    for law, summary in summaries.items():
        laws[law.value] = {"runs": summary.runs}
        if request.include_curves:
            laws[law.value]["curves"] = summary.curves
    return json_safe({"laws": laws, "checks": montecarlo_checks(summaries)})


@router.post("/sweep")
def simulate_sweep(request: SweepRequest):
    config = resolve_config(request)
    try:
        records = run_sweep(config, request.theta_hat0, request.laws)
    except ContractViolation as error:
        raise HTTPException(status_code=400, detail=str(error)) from error
    rows = [
        {
            "law": record.law.value,
            "theta_hat0": record.theta_hat0,
            "min_psi0": record.min_psi0,
            "max_ttil": record.max_ttil,
            "final_x_norm": record.final_x_norm,
            "error": record.error,
        }
        for record in records
    ]
    return json_safe({"rows": rows, "gd_below_rls_forget": sweep_ordering_holds(records)})


@router.post("/eps-sweep")
def simulate_eps_sweep(request: EpsSweepRequest):
    config = resolve_config(request)
    if request.eps_values is not None and any(value <= 0 for value in request.eps_values):
        raise HTTPException(status_code=422, detail="eps_values must be positive")
    try:
        records = run_eps_sweep(config, request.eps_values, request.theta_hat0)
    except ContractViolation as error:
        raise HTTPException(status_code=400, detail=str(error)) from error
    return json_safe({"rows": [vars(record) for record in records]})


@router.post("/gamma")
def simulate_gamma(request: GammaRequest):
    return require_success(inflation_levels(resolve_config(request), request.delta))
