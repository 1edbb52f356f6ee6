"""UI-neutral batch experiment services: Monte Carlo, uncertainty sweep and eps_h sweep."""

from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from estimation_engine import GainLaw, parse_law
from sim_config import SimConfig
from sim_engine import (
    EpsSweepRecord,
    MonteCarloSummary,
    SweepRecord,
    eps_sweep,
    monte_carlo,
    uncertainty_sweep,
)

ISS_FINAL_TOLERANCE = 0.05


def run_montecarlo(
    config: SimConfig,
    laws: Optional[Iterable] = None,
    workers: Optional[int] = None,
) -> Dict[GainLaw, MonteCarloSummary]:
    """One Monte Carlo batch per law, all sharing the same sampled initial conditions."""
    laws = config.experiment.laws if laws is None else [parse_law(law) for law in laws]
    return {law: monte_carlo(config, law=law, workers=workers) for law in laws}


def montecarlo_checks(summaries: Dict[GainLaw, MonteCarloSummary]) -> Dict:
    """Safety, stabilization and convergence-ordering checks over per-law batches."""
    checks: Dict = {"safety": {}, "stabilization": {}, "convergence_ratio": {}}
    final_means = {}
    for law, summary in summaries.items():
        runs = summary.runs
        checks["safety"][law.value] = bool((runs["violations"] == 0).all())
        checks["stabilization"][law.value] = bool((runs["final_x_norm"] <= ISS_FINAL_TOLERANCE).all())
        curves = summary.curves
        initial = float(curves["ttil_mean"].iloc[0])
        final = float(curves["ttil_mean"].iloc[-1])
        final_means[law] = final
        checks["convergence_ratio"][law.value] = final / initial if initial > 0 else float("nan")
    if GainLaw.RLS in final_means and len(final_means) > 1:
        checks["rls_slowest"] = all(final_means[GainLaw.RLS] >= value for value in final_means.values())
    if GainLaw.RLS_FORGET in final_means and GainLaw.GD in final_means:
        checks["forget_not_slower_than_gd"] = final_means[GainLaw.RLS_FORGET] <= final_means[GainLaw.GD]
    return checks


def run_sweep(config: SimConfig, theta_hat0_list: Optional[Sequence] = None, laws: Optional[Iterable] = None) -> List[SweepRecord]:
    return uncertainty_sweep(config, theta_hat0_list, laws)


def sweep_ordering_holds(records: Sequence[SweepRecord]) -> bool:
    """True when some initial estimate leaves GD closer to the obstacle than RLS with forgetting."""
    by_estimate: Dict[tuple, Dict[GainLaw, float]] = {}
    for record in records:
        key = tuple(np.round(record.theta_hat0, 12))
        by_estimate.setdefault(key, {})[record.law] = record.min_psi0
    return any(
        GainLaw.GD in values and GainLaw.RLS_FORGET in values
        and values[GainLaw.GD] < values[GainLaw.RLS_FORGET]
        for values in by_estimate.values()
    )


def run_eps_sweep(config: SimConfig, eps_values: Optional[Sequence[float]] = None, theta_hat0=None) -> List[EpsSweepRecord]:
    return eps_sweep(config, eps_values, theta_hat0)


__all__ = [
    "ISS_FINAL_TOLERANCE",
    "montecarlo_checks",
    "run_eps_sweep",
    "run_montecarlo",
    "run_sweep",
    "sweep_ordering_holds",
]
