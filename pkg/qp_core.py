"""Closed-form solutions of the single-constraint QPs used by the controllers.

Both controller QPs carry exactly one affine constraint, so the minimizers are
Euclidean projections onto a halfspace.
"""

from dataclasses import dataclass
from typing import Literal

import numpy as np

from dynamics_models import ContractViolation

ZERO_NORM_THRESHOLD = 1e-12


class InfeasibleConstraintError(RuntimeError):
    """Raised when a halfspace constraint has an empty feasible set."""


@dataclass(frozen=True)
class HalfspaceConstraint:
    """a . u <= b (sense "le") or a . u >= b (sense "ge")."""

    a: np.ndarray
    b: float
    sense: Literal["le", "ge"]

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 1 or not np.all(np.isfinite(a)) or not np.isfinite(self.b):
            raise ContractViolation("Halfspace constraint needs a finite vector a and finite b")
        if self.sense not in ("le", "ge"):
            raise ContractViolation(f"Unknown constraint sense '{self.sense}'")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def residual(self, u) -> float:
        """Signed slack; non-negative when u satisfies the constraint."""
        value = float(self.a @ np.asarray(u, dtype=float))
        return self.b - value if self.sense == "le" else value - self.b

    def is_satisfied(self, u, tol: float = 1e-9) -> bool:
        return self.residual(u) >= -tol


def min_norm_halfspace(constraint: HalfspaceConstraint) -> np.ndarray:
    """Minimize 1/2 |u|^2 subject to a . u <= b."""
    if constraint.sense != "le":
        raise ContractViolation("min_norm_halfspace expects a '<=' constraint")
    a, b = constraint.a, constraint.b
    if b >= 0.0:
        return np.zeros_like(a)
    norm_sq = float(a @ a)
    if np.sqrt(norm_sq) < ZERO_NORM_THRESHOLD:
        raise InfeasibleConstraintError(f"No u satisfies 0 <= {b:.6g}")
    return (b / norm_sq) * a


def project_halfspace(u_ref, constraint: HalfspaceConstraint) -> np.ndarray:
    """Minimize 1/2 |u - u_ref|^2 subject to a . u >= b."""
    if constraint.sense != "ge":
        raise ContractViolation("project_halfspace expects a '>=' constraint")
    u_ref = np.asarray(u_ref, dtype=float)
    a, b = constraint.a, constraint.b
    gap = b - float(a @ u_ref)
    if gap <= 0.0:
        return u_ref.copy()
    norm_sq = float(a @ a)
    if np.sqrt(norm_sq) < ZERO_NORM_THRESHOLD:
        raise InfeasibleConstraintError(f"No u satisfies 0 >= {b:.6g}")
    return u_ref + (gap / norm_sq) * a


__all__ = [
    "HalfspaceConstraint",
    "InfeasibleConstraintError",
    "ZERO_NORM_THRESHOLD",
    "min_norm_halfspace",
    "project_halfspace",
]
