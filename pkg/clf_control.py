"""Exponential ISS control Lyapunov functions and the min-norm adaptive controller.

The controller solves

    min 1/2 |u|^2  s.t.  LfV + LFV theta_hat + LgV u <= -c3 V - |LFV|^2 / eps_V

which keeps V decreasing up to a term driven by the estimation error.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from dynamics_models import ContractViolation, ParametricAffineSystem, check_params, check_state
from qp_core import HalfspaceConstraint, InfeasibleConstraintError, min_norm_halfspace


class ClfInfeasibleError(InfeasibleConstraintError):
    """Raised when no control satisfies the CLF decrease condition at a state."""


@dataclass(frozen=True)
class EissClf:
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    c3: float = 1.0
    eps_v: float = 20.0
    P: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.c3 <= 0.0 or self.eps_v <= 0.0:
            raise ValueError("CLF constants c3 and eps_V must be positive")


@dataclass(frozen=True)
class ClfLieData:
    LfV: float
    LFV: np.ndarray
    LgV: np.ndarray


def quadratic_clf(P, c3: float = 1.0, eps_v: float = 20.0) -> EissClf:
    """V(x) = 1/2 x^T P x."""
    P = np.asarray(P, dtype=float)
    return EissClf(
        value=lambda x: 0.5 * float(x @ P @ x),
        gradient=lambda x: P @ x,
        c3=c3,
        eps_v=eps_v,
        P=P,
    )


def double_integrator_clf(c3: float = 1.0, eps_v: float = 20.0) -> EissClf:
    """V(x) = 1/2 |q|^2 + 1/2 |q + qd|^2 for the planar double integrator."""
    P = np.kron(np.array([[2.0, 1.0], [1.0, 1.0]]), np.eye(2))
    return quadratic_clf(P, c3=c3, eps_v=eps_v)


def clf_lie(clf: EissClf, sys: ParametricAffineSystem, x) -> ClfLieData:
    x = check_state(sys, x)
    grad = clf.gradient(x)
    return ClfLieData(
        LfV=float(grad @ sys.f(x)),
        LFV=grad @ sys.F(x),
        LgV=grad @ sys.g(x),
    )


def clf_constraint(clf: EissClf, sys: ParametricAffineSystem, x, theta_hat) -> HalfspaceConstraint:
    x = check_state(sys, x)
    theta_hat = check_params(sys, theta_hat)
    lie = clf_lie(clf, sys, x)
    b = -clf.c3 * clf.value(x) - float(lie.LFV @ lie.LFV) / clf.eps_v - lie.LfV - float(lie.LFV @ theta_hat)
    return HalfspaceConstraint(a=lie.LgV, b=b, sense="le")


def clf_controller(clf: EissClf, sys: ParametricAffineSystem, x, theta_hat) -> np.ndarray:
    """Min-norm control satisfying the eISS-CLF condition at (x, theta_hat)."""
    constraint = clf_constraint(clf, sys, x, theta_hat)
    try:
        return min_norm_halfspace(constraint)
    except InfeasibleConstraintError as error:
        raise ClfInfeasibleError(f"CLF infeasible at state x={np.asarray(x).tolist()}") from error


def clf_quadratic_bounds(clf: EissClf) -> Tuple[float, float]:
    """(c1, c2) with c1 |x|^2 <= V(x) <= c2 |x|^2 for V = 1/2 x^T P x."""
    if clf.P is None:
        raise ContractViolation("quadratic bounds need V = 1/2 x^T P x")
    eigenvalues = np.linalg.eigvalsh(0.5 * (clf.P + clf.P.T))
    return float(eigenvalues[0]) / 2.0, float(eigenvalues[-1]) / 2.0


def clf_decrease_bound(clf: EissClf, value: float, theta_tilde_norm: float) -> float:
    """-c3 V + (eps_V / 4) |theta_tilde|^2, the decrease rate V must stay below."""
    return -clf.c3 * value + 0.25 * clf.eps_v * theta_tilde_norm**2


__all__ = [
    "ClfInfeasibleError",
    "ClfLieData",
    "EissClf",
    "clf_constraint",
    "clf_controller",
    "clf_decrease_bound",
    "clf_lie",
    "clf_quadratic_bounds",
    "double_integrator_clf",
    "quadratic_clf",
]
