"""UI-neutral single-run simulation services.

Wraps the engine so callers get plain result dictionaries and monitor
reports instead of engine exceptions.
"""

from typing import Dict, Optional

import numpy as np

from cbf_safety import gamma_recursion
from dynamics_models import ContractViolation
from sim_config import SimConfig
from sim_engine import (
    SimulationAbort,
    Trajectory,
    build_closed_loop,
    cbf_constraint_violations,
    clf_decrease_violations,
    initial_conditions,
    issf_margins,
    issf_violations,
    simulate,
)


def monitor_report(config: SimConfig, trajectory: Trajectory) -> Dict:
    """Post-hoc safety, stability and constraint monitors for one trajectory."""
    loop = build_closed_loop(config)
    if trajectory is None or not len(trajectory):
        return {"rows": 0}
    delta_hat = trajectory.delta_hat
    margins = issf_margins(trajectory, loop.chain, delta_hat)
    report = {
        "rows": len(trajectory),
        "delta_hat": delta_hat,
        "gammas": gamma_recursion(loop.chain.alphas, loop.chain.eps_h, delta_hat).tolist(),
        "min_margin": float(np.min(margins)),
        "issf_violations": issf_violations(trajectory, loop.chain),
        "min_psi0": float(np.min(trajectory.psi[:, 0])),
        "final_x_norm": trajectory.final_state_norm,
    }
    if loop.filter_enabled:
        report["cbf_violations"] = int(cbf_constraint_violations(trajectory).size)
    else:
        report["clf_decrease_violations"] = int(clf_decrease_violations(trajectory, loop.clf).size)
    return report


def monitors_pass(report: Dict) -> bool:
    return (
        report.get("issf_violations", 0) == 0
        and report.get("cbf_violations", 0) == 0
        and report.get("clf_decrease_violations", 0) == 0
    )


def run_simulation(
    config: SimConfig,
    x0=None,
    theta_hat0=None,
    seed: Optional[int] = None,
) -> Dict:
    """Single closed-loop run; missing initial conditions come from config or are sampled."""
    default_x0, default_theta = initial_conditions(config, seed)
    x0 = default_x0 if x0 is None else np.asarray(x0, dtype=float)
    theta_hat0 = default_theta if theta_hat0 is None else np.asarray(theta_hat0, dtype=float)
    result = {"x0": x0.tolist(), "theta_hat0": theta_hat0.tolist()}
    try:
        trajectory = simulate(config, x0, theta_hat0)
    except SimulationAbort as abort:
        result.update({
            "success": False,
            "error": str(abort),
            "partial": True,
            "trajectory": abort.partial,
            "monitors": monitor_report(config, abort.partial),
        })
        return result
    except ContractViolation as error:
        result.update({"success": False, "error": str(error), "partial": False, "trajectory": None, "monitors": {}})
        return result
    result.update({
        "success": True,
        "partial": False,
        "trajectory": trajectory,
        "monitors": monitor_report(config, trajectory),
    })
    return result


def inflation_levels(config: SimConfig, delta: float) -> Dict:
    """gamma_1 .. gamma_r for the configured chain at disturbance level delta."""
    if delta < 0:
        return {"success": False, "error": "delta must be non-negative"}
    chain = build_closed_loop(config).chain
    return {"success": True, "delta": delta, "gammas": gamma_recursion(chain.alphas, chain.eps_h, delta).tolist()}


__all__ = [
    "inflation_levels",
    "monitor_report",
    "monitors_pass",
    "run_simulation",
]
