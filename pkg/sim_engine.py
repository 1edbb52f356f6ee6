"""Closed-loop simulation of the augmented system (x, theta_hat, Gamma) and batch experiments.

Each step evaluates the CLF controller and the safety filter once at the start
of the step, holds the control over a classical RK4 step with the history
stack frozen, then records the new sample and offers the window regressor to
the stack.
"""

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from cbf_safety import (
    CbfInfeasibleError,
    HocbfChain,
    InflatedSetSpec,
    ObstacleConstraint,
    cbf_constraint,
    gamma_recursion,
    inflated_set_spec,
    obstacle_chain,
    safety_filter,
)
from clf_control import ClfInfeasibleError, EissClf, clf_controller, clf_decrease_bound, double_integrator_clf
from dynamics_models import ContractViolation, ParametricAffineSystem, check_params, check_state, get_model
from estimation_engine import (
    EstimatorState,
    GainLaw,
    estimation_error_norm,
    gain_law_rhs,
    new_estimator,
    parse_law,
    symmetrize,
)
from sim_config import SimConfig, with_overrides

load_dotenv()

logger = logging.getLogger(__name__)

ISSF_TOLERANCE = 1e-4
CBF_TOLERANCE = 1e-9
CLF_DECREASE_TOLERANCE = 1e-3


class SimulationAbort(RuntimeError):
    """Raised when a run cannot continue; carries the step, time and partial record."""

    def __init__(self, cause: str, step: Optional[int] = None, time: Optional[float] = None, partial=None):
        where = "" if step is None else f" at step {step} (t={time:.6g} s)"
        super().__init__(f"Simulation aborted{where}: {cause}")
        self.cause = cause
        self.step = step
        self.time = time
        self.partial = partial


class _BatchReporter:
    """Turn recoverable batch failures into warnings, as the service layer expects."""

    def warning(self, message):
        logger.warning(message)
        warnings.warn(str(message), RuntimeWarning, stacklevel=2)


reporter = _BatchReporter()


def default_workers() -> int:
    """ADAPTIVE_SAFETY_WORKERS, or one worker per CPU when unset."""
    cpus = os.cpu_count() or 1
    raw = os.getenv("ADAPTIVE_SAFETY_WORKERS", "").strip()
    if not raw:
        return cpus
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("Ignoring ADAPTIVE_SAFETY_WORKERS=%r; using %d workers", raw, cpus)
        return cpus


# ======================================================
# 1. INTEGRATOR
# ======================================================
def rk4_step(deriv: Callable[[np.ndarray, float], np.ndarray], s, t: float, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of s_dot = deriv(s, t)."""
    s = np.asarray(s, dtype=float)
    k1 = deriv(s, t)
    k2 = deriv(s + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = deriv(s + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = deriv(s + dt * k3, t + dt)
    for stage in (k1, k2, k3, k4):
        if not np.all(np.isfinite(stage)):
            raise SimulationAbort(f"non-finite derivative near t={t:.6g}")
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ======================================================
# 2. CLOSED LOOP
# ======================================================
@dataclass(frozen=True)
class ClosedLoop:
    system: ParametricAffineSystem
    clf: EissClf
    chain: HocbfChain
    inflation: InflatedSetSpec
    theta_true: np.ndarray
    filter_enabled: bool = True


def build_closed_loop(config: SimConfig) -> ClosedLoop:
    """Assemble the model, certificates and ground truth a config describes."""
    system = get_model(config.system.model)
    if system.name != "double_integrator_drag":
        raise ContractViolation(f"No built-in certificates for model '{system.name}'")
    cbf = config.cbf
    chain = obstacle_chain(
        ObstacleConstraint(center=np.array(cbf.obstacle_center), radius=cbf.obstacle_radius),
        alpha1_lambda=cbf.alpha1_lambda,
        alpha2_lambda=cbf.alpha2_lambda,
        eps_h=cbf.eps_h,
        margin=cbf.margin,
    )
    return ClosedLoop(
        system=system,
        clf=double_integrator_clf(c3=config.clf.c3, eps_v=config.clf.eps_v),
        chain=chain,
        inflation=inflated_set_spec(chain),
        theta_true=np.array(config.system.true_theta, dtype=float),
        filter_enabled=cbf.enabled,
    )


def closed_loop_control(loop: ClosedLoop, x, theta_hat) -> Tuple[np.ndarray, np.ndarray, float]:
    """(u_ref, u, cbf residual) at (x, theta_hat)."""
    u_ref = clf_controller(loop.clf, loop.system, x, theta_hat)
    constraint = cbf_constraint(loop.chain, loop.system, x, theta_hat)
    if loop.filter_enabled:
        u = safety_filter(loop.chain, loop.system, x, theta_hat, u_ref, constraint=constraint)
    else:
        u = u_ref
    return u_ref, u, constraint.residual(u)


@dataclass
class Trajectory:
    """Per-step record of a run; row k is taken at t = k dt before the step's integration."""

    t: np.ndarray
    x: np.ndarray
    u_ref: np.ndarray
    u: np.ndarray
    theta_hat: np.ndarray
    theta_tilde_norm: np.ndarray
    V: np.ndarray
    psi: np.ndarray
    stack_size: np.ndarray
    sigma_min: np.ndarray
    cbf_residual: np.ndarray
    gamma: np.ndarray
    stack_updated: np.ndarray
    state_labels: Tuple[str, ...] = ()
    completed: bool = True

    @classmethod
    def allocate(cls, steps: int, n: int, m: int, p: int, r: int, state_labels: Tuple[str, ...]) -> "Trajectory":
        rows = steps + 1
        return cls(
            t=np.zeros(rows),
            x=np.zeros((rows, n)),
            u_ref=np.zeros((rows, m)),
            u=np.zeros((rows, m)),
            theta_hat=np.zeros((rows, p)),
            theta_tilde_norm=np.zeros(rows),
            V=np.zeros(rows),
            psi=np.zeros((rows, r)),
            stack_size=np.zeros(rows, dtype=int),
            sigma_min=np.zeros(rows),
            cbf_residual=np.zeros(rows),
            gamma=np.zeros((rows, p, p)),
            stack_updated=np.zeros(rows, dtype=bool),
            state_labels=state_labels,
        )

    def __len__(self) -> int:
        return self.t.shape[0]

    def truncated(self, rows: int) -> "Trajectory":
        """First `rows` records, flagged incomplete."""
        kept = {
            name: getattr(self, name)[:rows]
            for name in (
                "t", "x", "u_ref", "u", "theta_hat", "theta_tilde_norm", "V", "psi",
                "stack_size", "sigma_min", "cbf_residual", "gamma", "stack_updated",
            )
        }
        return Trajectory(**kept, state_labels=self.state_labels, completed=False)

    @property
    def gamma_norm(self) -> np.ndarray:
        """Spectral norm of the gain matrix per record."""
        return np.linalg.norm(self.gamma, 2, axis=(1, 2))

    @property
    def delta_hat(self) -> float:
        """Realized disturbance level max_t |theta_tilde(t)|."""
        return float(np.max(self.theta_tilde_norm)) if len(self) else 0.0

    @property
    def final_state_norm(self) -> float:
        return float(np.linalg.norm(self.x[-1])) if len(self) else float("nan")

    def frame(self) -> pd.DataFrame:
        """Rows in trajectory CSV column order."""
        columns = {"t": self.t}
        for i, label in enumerate(self.state_labels):
            columns[label] = self.x[:, i]
        for i in range(self.u.shape[1]):
            columns[f"u{i + 1}"] = self.u[:, i]
        for i in range(self.u_ref.shape[1]):
            columns[f"uref{i + 1}"] = self.u_ref[:, i]
        for i in range(self.theta_hat.shape[1]):
            columns[f"that{i + 1}"] = self.theta_hat[:, i]
        columns["ttil_norm"] = self.theta_tilde_norm
        columns["V"] = self.V
        for i in range(self.psi.shape[1]):
            columns[f"psi{i}"] = self.psi[:, i]
        columns["stack_size"] = self.stack_size
        columns["sigma_min"] = self.sigma_min
        return pd.DataFrame(columns)


def pack_augmented(x, theta_hat, gamma) -> np.ndarray:
    """Augmented state s = (x, theta_hat, vec Gamma)."""
    return np.concatenate([x, theta_hat, np.asarray(gamma).ravel()])


def augmented_dynamics(loop: ClosedLoop, estimator: EstimatorState, u) -> Callable[[np.ndarray, float], np.ndarray]:
    """s_dot for the augmented state with u held and the current stack frozen.

    x is checked once per step by the controller, so the stages call the model
    evaluators directly.
    """
    sys = loop.system
    n, p = sys.n, sys.p
    f, F, g = sys.f, sys.F, sys.g
    theta_true = loop.theta_true
    u = np.asarray(u, dtype=float)
    A, b = estimator.stack.information_matrix, estimator.stack.cross_term
    gain_rhs = gain_law_rhs(estimator.stack, estimator.law, estimator.beta, estimator.gamma_bar)

    def deriv(s: np.ndarray, _t: float) -> np.ndarray:
        xs, th, gam = s[:n], s[n:n + p], s[n + p:].reshape(p, p)
        return np.concatenate([
            f(xs) + F(xs) @ theta_true + g(xs) @ u,
            gam @ (b - A @ th),
            gain_rhs(gam).ravel(),
        ])

    return deriv


def run_closed_loop(
    loop: ClosedLoop,
    estimator: EstimatorState,
    x0,
    dt: float,
    steps: int,
) -> Trajectory:
    """Integrate the augmented closed loop for `steps` steps from x0 and the estimator's state."""
    sys = loop.system
    n, m, p = sys.n, sys.m, sys.p
    x = np.asarray(x0, dtype=float).copy()
    record = Trajectory.allocate(steps, n, m, p, loop.chain.relative_degree, sys.labels())
    estimator.window.append(0.0, x, np.zeros(m))

    for k in range(steps + 1):
        t = k * dt
        theta_hat = estimator.theta_hat
        try:
            u_ref, u, residual = closed_loop_control(loop, x, theta_hat)
        except (ClfInfeasibleError, CbfInfeasibleError, ContractViolation) as error:
            raise SimulationAbort(str(error), step=k, time=t, partial=record.truncated(k)) from error

        record.t[k] = t
        record.x[k] = x
        record.u_ref[k] = u_ref
        record.u[k] = u
        record.theta_hat[k] = theta_hat
        record.theta_tilde_norm[k] = estimation_error_norm(theta_hat, loop.theta_true)
        record.V[k] = loop.clf.value(x)
        record.psi[k] = [psi(x) for psi in loop.chain.psi]
        record.stack_size[k] = len(estimator.stack)
        record.sigma_min[k] = estimator.stack.sigma_min
        record.cbf_residual[k] = residual
        record.gamma[k] = estimator.gamma
        if k == steps:
            break

        deriv = augmented_dynamics(loop, estimator, u)
        try:
            s_next = rk4_step(deriv, pack_augmented(x, theta_hat, estimator.gamma), t, dt)
        except (SimulationAbort, ContractViolation) as error:
            cause = error.cause if isinstance(error, SimulationAbort) else str(error)
            raise SimulationAbort(cause, step=k, time=t, partial=record.truncated(k + 1)) from error

        x = s_next[:n]
        estimator.theta_hat = s_next[n:n + p]
        estimator.gamma = symmetrize(s_next[n + p:].reshape(p, p))
        record.stack_updated[k + 1] = estimator.record_sample((k + 1) * dt, x, u)

    return record


def simulate(config: SimConfig, x0, theta_hat0, law=None) -> Trajectory:
    """Deterministic closed-loop run from (x0, theta_hat0) under the configured (or given) law."""
    loop = build_closed_loop(config)
    x0 = check_state(loop.system, x0)
    theta_hat0 = check_params(loop.system, theta_hat0)
    settings = config.estimator
    estimator = new_estimator(
        loop.system,
        theta_hat0,
        law if law is not None else settings.law,
        capacity=settings.N,
        gamma0=settings.gamma0,
        beta=settings.beta,
        gamma_bar=settings.gamma_bar,
        window_dt=settings.window_dt,
    )
    return run_closed_loop(loop, estimator, x0, config.sim.dt, config.steps)


# ======================================================
# 3. POST-HOC MONITORS
# ======================================================
def issf_margins(trajectory: Trajectory, chain: HocbfChain, delta: Optional[float] = None) -> np.ndarray:
    """rho_i(x(t), delta) per recorded step; delta defaults to the realized max |theta_tilde|."""
    if delta is None:
        delta = trajectory.delta_hat
    return trajectory.psi + gamma_recursion(chain.alphas, chain.eps_h, delta)[None, :]


def issf_violations(trajectory: Trajectory, chain: HocbfChain, tol: float = ISSF_TOLERANCE) -> int:
    """Number of steps where some inflated-set margin drops below -tol."""
    margins = issf_margins(trajectory, chain)
    return int(np.count_nonzero(np.any(margins < -tol, axis=1)))


def cbf_constraint_violations(trajectory: Trajectory, tol: float = CBF_TOLERANCE) -> np.ndarray:
    """Steps where the applied control misses the safety-filter constraint."""
    return np.flatnonzero(trajectory.cbf_residual < -tol)


def clf_decrease_violations(trajectory: Trajectory, clf: EissClf, tol: float = CLF_DECREASE_TOLERANCE) -> np.ndarray:
    """Steps where the finite-difference V_dot exceeds -c3 V + (eps_V/4)|theta_tilde|^2 + tol.

    The bound is averaged over each step (trapezoid) to match the difference quotient.
    """
    if len(trajectory) < 2:
        return np.array([], dtype=int)
    dt = np.diff(trajectory.t)
    v_dot = np.diff(trajectory.V) / dt
    bound = clf_decrease_bound(clf, trajectory.V, trajectory.theta_tilde_norm)
    averaged = 0.5 * (bound[:-1] + bound[1:])
    return np.flatnonzero(v_dot > averaged + tol)


# ======================================================
# 4. EXPERIMENTS
# ======================================================
def sample_initial_conditions(rng: np.random.Generator, config: SimConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform draws of x0 and theta_hat0 from the configured boxes."""
    x_box = np.array(config.experiment.x0_box, dtype=float)
    theta_box = np.array(config.experiment.theta_hat0_box, dtype=float)
    x0 = rng.uniform(x_box[:, 0], x_box[:, 1])
    theta_hat0 = rng.uniform(theta_box[:, 0], theta_box[:, 1])
    return x0, theta_hat0


def run_seed(seed: int, index: int) -> int:
    """Per-run seed derived from (batch seed, run index)."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def initial_conditions(config: SimConfig, seed: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Configured x0 / theta_hat0 where given, the rest sampled with `seed`."""
    rng = np.random.default_rng(config.sim.seed if seed is None else seed)
    x0, theta_hat0 = sample_initial_conditions(rng, config)
    if config.experiment.x0 is not None:
        x0 = np.array(config.experiment.x0, dtype=float)
    if config.experiment.theta_hat0 is not None:
        theta_hat0 = np.array(config.experiment.theta_hat0, dtype=float)
    return x0, theta_hat0


def nominal_state(config: SimConfig) -> np.ndarray:
    """Configured x0, or the centre of the sampling box."""
    if config.experiment.x0 is not None:
        return np.array(config.experiment.x0, dtype=float)
    return np.array(config.experiment.x0_box, dtype=float).mean(axis=1)


@dataclass
class RunOutcome:
    run: int
    seed: int
    law: GainLaw
    x0: np.ndarray
    theta_hat0: np.ndarray
    trajectory: Optional[Trajectory]
    error: Optional[str] = None
    violations: int = 0

    @property
    def succeeded(self) -> bool:
        return self.error is None

    @property
    def min_psi0(self) -> float:
        if self.trajectory is None or not len(self.trajectory):
            return float("nan")
        return float(np.min(self.trajectory.psi[:, 0]))

    @property
    def final_x_norm(self) -> float:
        if not self.succeeded or self.trajectory is None:
            return float("nan")
        return self.trajectory.final_state_norm


def _run_one(config: SimConfig, law: GainLaw, index: int) -> RunOutcome:
    seed = run_seed(config.sim.seed, index)
    x0, theta_hat0 = sample_initial_conditions(np.random.default_rng(seed), config)
    chain = build_closed_loop(config).chain
    try:
        trajectory = simulate(config, x0, theta_hat0, law=law)
        error = None
    except SimulationAbort as abort:
        trajectory = abort.partial
        error = str(abort)
    except ContractViolation as violation:
        trajectory, error = None, str(violation)
    violations = issf_violations(trajectory, chain) if trajectory is not None and len(trajectory) else 0
    return RunOutcome(run=index, seed=seed, law=law, x0=x0, theta_hat0=theta_hat0,
                      trajectory=trajectory, error=error, violations=violations)


@dataclass
class MonteCarloSummary:
    law: GainLaw
    curves: pd.DataFrame
    runs: pd.DataFrame
    outcomes: List[RunOutcome] = field(default_factory=list)

    @property
    def safety_violations(self) -> List[bool]:
        return [outcome.violations > 0 for outcome in self.outcomes]


def summarize_runs(law: GainLaw, outcomes: Sequence[RunOutcome], t: np.ndarray) -> MonteCarloSummary:
    """Pointwise statistics of |theta_tilde(t)| over completed runs plus one row per run."""
    completed = [outcome for outcome in outcomes if outcome.succeeded]
    if completed:
        errors = pd.DataFrame({outcome.run: outcome.trajectory.theta_tilde_norm for outcome in completed})
        curves = pd.DataFrame({
            "t": t,
            "ttil_mean": errors.mean(axis=1).to_numpy(),
            "ttil_std": errors.std(axis=1, ddof=0).to_numpy(),
            "ttil_min": errors.min(axis=1).to_numpy(),
            "ttil_max": errors.max(axis=1).to_numpy(),
        })
    else:
        nan = np.full(t.shape, np.nan)
        curves = pd.DataFrame({"t": t, "ttil_mean": nan, "ttil_std": nan, "ttil_min": nan, "ttil_max": nan})
    runs = pd.DataFrame({
        "run": [outcome.run for outcome in outcomes],
        "seed": [outcome.seed for outcome in outcomes],
        "final_x_norm": [outcome.final_x_norm for outcome in outcomes],
        "min_psi0": [outcome.min_psi0 for outcome in outcomes],
        "violations": [outcome.violations for outcome in outcomes],
    })
    return MonteCarloSummary(law=law, curves=curves, runs=runs, outcomes=list(outcomes))


def monte_carlo(config: SimConfig, law=None, workers: Optional[int] = None) -> MonteCarloSummary:
    """Run config.sim.runs sampled trajectories under one law and aggregate them.

    Initial conditions depend only on (seed, run index), so every law sees the
    same draws and the result does not depend on the worker count.
    """
    law = parse_law(law if law is not None else config.estimator.law)
    workers = default_workers() if workers is None else max(1, workers)
    indices = list(range(config.sim.runs))
    logger.info("Monte Carlo: %d runs, law=%s, workers=%d", len(indices), law.value, workers)
    if workers > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(_run_one, [config] * len(indices), [law] * len(indices), indices))
    else:
        outcomes = [_run_one(config, law, index) for index in indices]
    for outcome in outcomes:
        if not outcome.succeeded:
            reporter.warning(f"Run {outcome.run} ({law.value}) failed: {outcome.error}")
    t = np.arange(config.steps + 1) * config.sim.dt
    return summarize_runs(law, outcomes, t)


@dataclass
class SweepRecord:
    law: GainLaw
    theta_hat0: np.ndarray
    trajectory: Optional[Trajectory]
    error: Optional[str] = None

    @property
    def min_psi0(self) -> float:
        if self.trajectory is None or not len(self.trajectory):
            return float("nan")
        return float(np.min(self.trajectory.psi[:, 0]))

    @property
    def max_ttil(self) -> float:
        if self.trajectory is None or not len(self.trajectory):
            return float("nan")
        return self.trajectory.delta_hat

    @property
    def final_x_norm(self) -> float:
        if self.error is not None or self.trajectory is None:
            return float("nan")
        return self.trajectory.final_state_norm


def uncertainty_sweep(config: SimConfig, theta_hat0_list=None, laws=None) -> List[SweepRecord]:
    """One run per (theta_hat0, law) from the nominal initial state."""
    theta_hat0_list = config.sweep.theta_hat0 if theta_hat0_list is None else theta_hat0_list
    laws = config.sweep.laws if laws is None else laws
    if not len(theta_hat0_list):
        raise ContractViolation("Sweep needs at least one initial estimate")
    x0 = nominal_state(config)
    records = []
    for theta_hat0 in theta_hat0_list:
        for law in laws:
            law = parse_law(law)
            theta_hat0 = np.asarray(theta_hat0, dtype=float)
            try:
                records.append(SweepRecord(law, theta_hat0, simulate(config, x0, theta_hat0, law=law)))
            except SimulationAbort as abort:
                reporter.warning(f"Sweep run {law.value} theta_hat0={theta_hat0.tolist()} failed: {abort}")
                records.append(SweepRecord(law, theta_hat0, abort.partial, error=str(abort)))
    return records


@dataclass
class EpsSweepRecord:
    eps_h: float
    min_psi0: float
    gamma1: float
    delta_hat: float
    max_u_norm: float
    final_x_norm: float
    error: Optional[str] = None


def eps_sweep(config: SimConfig, eps_values=None, theta_hat0=None) -> List[EpsSweepRecord]:
    """Trade-off between the robustness gain eps_h, the guaranteed set and control effort."""
    eps_values = config.eps_sweep.values if eps_values is None else eps_values
    system = get_model(config.system.model)
    x0 = nominal_state(config)
    if theta_hat0 is None:
        theta_hat0 = config.experiment.theta_hat0 or np.zeros(system.p)
    theta_hat0 = check_params(system, theta_hat0)
    if not len(eps_values):
        raise ContractViolation("eps sweep needs at least one eps_h value")
    records = []
    for eps_h in eps_values:
        run_config = with_overrides(config, cbf={"eps_h": float(eps_h)})
        chain = build_closed_loop(run_config).chain
        error = None
        try:
            trajectory = simulate(run_config, x0, theta_hat0)
        except SimulationAbort as abort:
            reporter.warning(f"eps_h={eps_h} run failed: {abort}")
            trajectory, error = abort.partial, str(abort)
        if trajectory is None or not len(trajectory):
            records.append(EpsSweepRecord(float(eps_h), *([float("nan")] * 5), error=error))
            continue
        delta_hat = trajectory.delta_hat
        records.append(EpsSweepRecord(
            eps_h=float(eps_h),
            min_psi0=float(np.min(trajectory.psi[:, 0])),
            gamma1=float(gamma_recursion(chain.alphas, chain.eps_h, delta_hat)[0]),
            delta_hat=delta_hat,
            max_u_norm=float(np.max(np.linalg.norm(trajectory.u, axis=1))),
            final_x_norm=trajectory.final_state_norm if error is None else float("nan"),
            error=error,
        ))
    return records


__all__ = [
    "ClosedLoop",
    "EpsSweepRecord",
    "MonteCarloSummary",
    "RunOutcome",
    "SimulationAbort",
    "SweepRecord",
    "Trajectory",
    "augmented_dynamics",
    "build_closed_loop",
    "cbf_constraint_violations",
    "clf_decrease_violations",
    "closed_loop_control",
    "default_workers",
    "eps_sweep",
    "initial_conditions",
    "issf_margins",
    "issf_violations",
    "monte_carlo",
    "nominal_state",
    "pack_augmented",
    "rk4_step",
    "run_closed_loop",
    "run_seed",
    "sample_initial_conditions",
    "simulate",
    "summarize_runs",
    "uncertainty_sweep",
]
