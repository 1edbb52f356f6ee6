"""Parametric control-affine systems and the built-in double integrator with drag.

A system is the triple (f, F, g) of

    x_dot = f(x) + F(x) theta + g(x) u

with dimensions (n, m, p). Models are registered by short name so the
configuration layer can select them without touching the controllers.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np


class ContractViolation(ValueError):
    """Raised when an operation receives inputs that break its preconditions."""


Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ParametricAffineSystem:
    """Model triple (f, F, g) with state, control and parameter dimensions."""

    name: str
    n: int
    m: int
    p: int
    f: Evaluator
    F: Evaluator
    g: Evaluator
    state_labels: Tuple[str, ...] = ()

    def labels(self) -> Tuple[str, ...]:
        if len(self.state_labels) == self.n:
            return self.state_labels
        return tuple(f"x{i + 1}" for i in range(self.n))


# ======================================================
# 1. DIMENSION CONTRACTS
# ======================================================
def _as_vector(values, length: int, label: str) -> np.ndarray:
    vector = np.asarray(values, dtype=float)
    if vector.shape != (length,):
        raise ContractViolation(f"{label} must have shape ({length},), got {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise ContractViolation(f"{label} has non-finite entries")
    return vector


def check_state(sys: ParametricAffineSystem, x) -> np.ndarray:
    return _as_vector(x, sys.n, "state")


def check_control(sys: ParametricAffineSystem, u) -> np.ndarray:
    return _as_vector(u, sys.m, "control")


def check_params(sys: ParametricAffineSystem, theta) -> np.ndarray:
    return _as_vector(theta, sys.p, "parameter vector")


# ======================================================
# 2. SYSTEM EVALUATION
# ======================================================
def drift(sys: ParametricAffineSystem, x) -> np.ndarray:
    """Return f(x)."""
    return sys.f(check_state(sys, x))


def regressor(sys: ParametricAffineSystem, x) -> np.ndarray:
    """Return the n x p regressor F(x)."""
    return sys.F(check_state(sys, x))


def actuation(sys: ParametricAffineSystem, x) -> np.ndarray:
    """Return the n x m actuation matrix g(x)."""
    return sys.g(check_state(sys, x))


def true_dynamics(sys: ParametricAffineSystem, x, u, theta) -> np.ndarray:
    """Return f(x) + F(x) theta + g(x) u for the ground-truth parameters."""
    x = check_state(sys, x)
    u = check_control(sys, u)
    theta = check_params(sys, theta)
    return sys.f(x) + sys.F(x) @ theta + sys.g(x) @ u


def estimated_dynamics(sys: ParametricAffineSystem, x, u, theta_hat) -> np.ndarray:
    """Return the nominal dynamics f(x) + F(x) theta_hat + g(x) u.

    The true dynamics differ from this by exactly F(x) (theta - theta_hat).
    """
    return true_dynamics(sys, x, u, theta_hat)


def matched_map(sys: ParametricAffineSystem, x, atol: float = 1e-10) -> Optional[np.ndarray]:
    """Return phi(x) with F(x) = g(x) phi(x), or None when the uncertainty is unmatched at x."""
    x = check_state(sys, x)
    g = sys.g(x)
    F = sys.F(x)
    phi, *_ = np.linalg.lstsq(g, F, rcond=None)
    if np.allclose(g @ phi, F, atol=atol, rtol=0.0):
        return phi
    return None


# ======================================================
# 3. BUILT-IN MODEL: PLANAR DOUBLE INTEGRATOR WITH DRAG
# ======================================================
# State layout x = [q1, q2, qd1, qd2]; theta = [D1, D2] drag coefficients.
# The drag term -D qd |qd| is folded into F so that theta stays positive.
_DI_ACTUATION = np.vstack([np.zeros((2, 2)), np.eye(2)])


def _di_drift(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x[2:], np.zeros(2)])


def _di_regressor(x: np.ndarray) -> np.ndarray:
    qd1, qd2 = x[2], x[3]
    speed = math.hypot(qd1, qd2)
    F = np.zeros((4, 2))
    F[2, 0] = -qd1 * speed
    F[3, 1] = -qd2 * speed
    return F


def _di_actuation(x: np.ndarray) -> np.ndarray:
    return _DI_ACTUATION.copy()


def double_integrator_drag() -> ParametricAffineSystem:
    """Planar double integrator q_ddot = -D qd |qd| + u."""
    return ParametricAffineSystem(
        name="double_integrator_drag",
        n=4,
        m=2,
        p=2,
        f=_di_drift,
        F=_di_regressor,
        g=_di_actuation,
        state_labels=("q1", "q2", "qd1", "qd2"),
    )


# ======================================================
# 4. MODEL REGISTRY
# ======================================================
MODEL_REGISTRY: Dict[str, Callable[[], ParametricAffineSystem]] = {
    "double_integrator_drag": double_integrator_drag,
}


def register_model(name: str, factory: Callable[[], ParametricAffineSystem]) -> None:
    """Register a model factory under a config-selectable name."""
    if not name or not name.strip():
        raise ContractViolation("Model name must be non-empty")
    MODEL_REGISTRY[name] = factory


def get_model(name: str) -> ParametricAffineSystem:
    """Build a registered model by name."""
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError as error:
        known = ", ".join(sorted(MODEL_REGISTRY))
        raise ContractViolation(f"Unknown model '{name}'. Known models: {known}") from error
    return factory()


__all__ = [
    "ContractViolation",
    "MODEL_REGISTRY",
    "ParametricAffineSystem",
    "actuation",
    "check_control",
    "check_params",
    "check_state",
    "double_integrator_drag",
    "drift",
    "estimated_dynamics",
    "get_model",
    "matched_map",
    "register_model",
    "regressor",
    "true_dynamics",
]
