"""High order control barrier functions with input-to-state safety margins.

For a constraint h of relative degree r the chain

    psi_0 = h,   psi_i = d/dt psi_{i-1} + alpha_i(psi_{i-1})

defines the safe set C. Under an estimation error bounded by delta the filter
keeps the inflated set C_delta = {x : psi_{i-1}(x) + gamma_i(delta) >= 0 for all i}
forward invariant, with gamma_i obtained by the backward recursion
gamma_r = -alpha_r^{-1}(-eps delta^2 / 4), gamma_i = -alpha_i^{-1}(-gamma_{i+1}).
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from dynamics_models import ContractViolation, ParametricAffineSystem, check_params, check_state
from qp_core import HalfspaceConstraint, InfeasibleConstraintError, project_halfspace


class CbfInfeasibleError(InfeasibleConstraintError):
    """Raised when no control satisfies the ISSf-HOCBF condition at a state."""


# ======================================================
# 1. CLASS K-INFINITY FUNCTIONS
# ======================================================
@dataclass(frozen=True)
class ClassKappaExt:
    """Extended class K-infinity function with an explicit inverse."""

    tag: str
    lam: float

    def __post_init__(self):
        if self.tag != "linear":
            raise ContractViolation(f"Unsupported class K-infinity function '{self.tag}'")
        if self.lam <= 0.0:
            raise ContractViolation("Linear class K-infinity slope must be positive")

    def __call__(self, s):
        return self.lam * s

    def inverse(self, y):
        return y / self.lam

    def derivative(self, s):
        return self.lam


def linear_kappa(lam: float) -> ClassKappaExt:
    return ClassKappaExt(tag="linear", lam=float(lam))


# ======================================================
# 2. CHAIN AND INFLATED SETS
# ======================================================
@dataclass(frozen=True)
class HocbfChain:
    """psi_0 .. psi_{r-1} with their gradients, the alphas and the robustness gain eps_h.

    The last gradient is used for the constraint; the others for regularity checks.
    """

    psi: Tuple[Callable[[np.ndarray], float], ...]
    psi_gradients: Tuple[Callable[[np.ndarray], np.ndarray], ...]
    alphas: Tuple[ClassKappaExt, ...]
    eps_h: float

    def __post_init__(self):
        r = len(self.alphas)
        if r < 1 or len(self.psi) != r or len(self.psi_gradients) != r:
            raise ContractViolation("Chain needs one psi, one gradient and one alpha per relative degree")
        if self.eps_h <= 0.0:
            raise ContractViolation("eps_h must be positive")

    @property
    def relative_degree(self) -> int:
        return len(self.alphas)


@dataclass(frozen=True)
class ObstacleConstraint:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ContractViolation("Obstacle radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))


def obstacle_chain(
    obstacle: ObstacleConstraint,
    alpha1_lambda: float = 1.0,
    alpha2_lambda: float = 0.5,
    eps_h: float = 1.0,
    margin: float = 0.0,
) -> HocbfChain:
    """Chain for h(x) = |q - q_o|^2 - R_o^2 - margin on the planar double integrator."""
    center = obstacle.center
    radius_sq = obstacle.radius**2 + margin
    alpha1 = linear_kappa(alpha1_lambda)

    def psi0(x):
        d = x[:2] - center
        return float(d @ d) - radius_sq

    def psi0_gradient(x):
        return np.concatenate([2.0 * (x[:2] - center), np.zeros(2)])

    def psi1(x):
        d = x[:2] - center
        return 2.0 * float(d @ x[2:]) + alpha1(psi0(x))

    def psi1_gradient(x):
        d = x[:2] - center
        return np.concatenate([2.0 * x[2:] + alpha1.derivative(psi0(x)) * 2.0 * d, 2.0 * d])

    return HocbfChain(
        psi=(psi0, psi1),
        psi_gradients=(psi0_gradient, psi1_gradient),
        alphas=(alpha1, linear_kappa(alpha2_lambda)),
        eps_h=float(eps_h),
    )


def psi_chain_eval(chain: HocbfChain, sys: ParametricAffineSystem, x) -> np.ndarray:
    """[psi_0(x), ..., psi_{r-1}(x)]."""
    x = check_state(sys, x)
    return np.array([psi(x) for psi in chain.psi])


def gamma_recursion(alphas: Sequence[ClassKappaExt], eps_h: float, delta: float) -> np.ndarray:
    """[gamma_1(delta), ..., gamma_r(delta)] through the inverse alphas."""
    if delta < 0.0:
        raise ContractViolation("delta must be non-negative")
    r = len(alphas)
    gammas = np.zeros(r)
    gammas[-1] = -alphas[-1].inverse(-eps_h * delta**2 / 4.0)
    for i in range(r - 2, -1, -1):
        gammas[i] = -alphas[i].inverse(-gammas[i + 1])
    return gammas


def gamma_recursion_linear(lambdas: Sequence[float], eps_h: float, delta: float) -> np.ndarray:
    """Closed form for linear alphas: gamma_r = eps delta^2 / (4 lambda_r), gamma_i = gamma_{i+1} / lambda_i."""
    if delta < 0.0:
        raise ContractViolation("delta must be non-negative")
    lambdas = np.asarray(lambdas, dtype=float)
    tail = np.cumprod(lambdas[::-1])[::-1]
    return eps_h * delta**2 / (4.0 * tail)


@dataclass(frozen=True)
class InflatedSetSpec:
    gammas: Tuple[Callable[[float], float], ...]

    def evaluate(self, delta: float) -> np.ndarray:
        if delta < 0.0:
            raise ContractViolation("delta must be non-negative")
        return np.array([gamma(delta) for gamma in self.gammas])


def inflated_set_spec(chain: HocbfChain) -> InflatedSetSpec:
    """gamma_i evaluators for the chain's alphas and eps_h."""
    r = chain.relative_degree
    return InflatedSetSpec(
        gammas=tuple(
            (lambda delta, i=i: float(gamma_recursion(chain.alphas, chain.eps_h, delta)[i]))
            for i in range(r)
        )
    )


def inflated_margins(chain: HocbfChain, spec: InflatedSetSpec, x, delta: float) -> np.ndarray:
    """rho_i(x, delta) = psi_{i-1}(x) + gamma_i(delta)."""
    x = np.asarray(x, dtype=float)
    return np.array([psi(x) for psi in chain.psi]) + spec.evaluate(delta)


def inflated_membership(chain: HocbfChain, spec: InflatedSetSpec, x, delta: float) -> Tuple[bool, np.ndarray]:
    margins = inflated_margins(chain, spec, x, delta)
    return bool(np.all(margins >= 0.0)), margins


# ======================================================
# 3. SAFETY FILTER
# ======================================================
@dataclass(frozen=True)
class CbfLieData:
    Lf: float
    LF: np.ndarray
    Lg: np.ndarray


def cbf_lie(chain: HocbfChain, sys: ParametricAffineSystem, x) -> CbfLieData:
    """Lie derivatives of psi_{r-1} along f, F and g."""
    x = check_state(sys, x)
    grad = chain.psi_gradients[-1](x)
    return CbfLieData(Lf=float(grad @ sys.f(x)), LF=grad @ sys.F(x), Lg=grad @ sys.g(x))


def cbf_constraint(chain: HocbfChain, sys: ParametricAffineSystem, x, theta_hat) -> HalfspaceConstraint:
    """Lg u >= -alpha_r(psi_{r-1}) + |LF|^2 / eps_h - Lf - LF theta_hat."""
    x = check_state(sys, x)
    theta_hat = check_params(sys, theta_hat)
    lie = cbf_lie(chain, sys, x)
    psi_last = chain.psi[-1](x)
    b = (
        -chain.alphas[-1](psi_last)
        + float(lie.LF @ lie.LF) / chain.eps_h
        - lie.Lf
        - float(lie.LF @ theta_hat)
    )
    return HalfspaceConstraint(a=lie.Lg, b=b, sense="ge")


def safety_filter(
    chain: HocbfChain,
    sys: ParametricAffineSystem,
    x,
    theta_hat,
    u_ref,
    constraint: Optional[HalfspaceConstraint] = None,
) -> np.ndarray:
    """Closest control to u_ref satisfying the ISSf-HOCBF condition.

    `constraint` may carry cbf_constraint(chain, sys, x, theta_hat) when the
    caller has already built it.
    """
    if constraint is None:
        constraint = cbf_constraint(chain, sys, x, theta_hat)
    try:
        return project_halfspace(u_ref, constraint)
    except InfeasibleConstraintError as error:
        raise CbfInfeasibleError(f"ISSf-HOCBF violated at state x={np.asarray(x).tolist()}") from error


# ======================================================
# 4. VALIDATORS
# ======================================================
def finite_difference_gradient(func: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.size):
        offset = np.zeros_like(x)
        offset[k] = step
        grad[k] = (func(x + offset) - func(x - offset)) / (2.0 * step)
    return grad


def check_chain_consistency(chain: HocbfChain, sys: ParametricAffineSystem, x, step: float = 1e-6) -> Dict[str, float]:
    """Compare the supplied chain against finite differences at x.

    Returns the largest gradient error relative to max(1, |grad|) and the
    largest recursion residual psi_i - (grad psi_{i-1} . f + alpha_i(psi_{i-1})).
    """
    x = check_state(sys, x)
    gradient_error = 0.0
    for psi, gradient in zip(chain.psi, chain.psi_gradients):
        analytic = gradient(x)
        numeric = finite_difference_gradient(psi, x, step)
        scale = max(1.0, float(np.linalg.norm(numeric)))
        gradient_error = max(gradient_error, float(np.linalg.norm(analytic - numeric)) / scale)
    recursion_error = 0.0
    for i in range(1, chain.relative_degree):
        previous = chain.psi[i - 1]
        expected = float(finite_difference_gradient(previous, x, step) @ sys.f(x)) + chain.alphas[i - 1](previous(x))
        recursion_error = max(recursion_error, abs(chain.psi[i](x) - expected))
    return {"gradient_error": gradient_error, "recursion_error": recursion_error}


def regularity_margin(chain: HocbfChain, x, level: int) -> float:
    """|grad psi_{level}(x)|, which must stay away from zero on the boundary of C^{level+1}."""
    return float(np.linalg.norm(chain.psi_gradients[level](np.asarray(x, dtype=float))))


__all__ = [
    "CbfInfeasibleError",
    "CbfLieData",
    "ClassKappaExt",
    "HocbfChain",
    "InflatedSetSpec",
    "ObstacleConstraint",
    "cbf_constraint",
    "cbf_lie",
    "check_chain_consistency",
    "finite_difference_gradient",
    "gamma_recursion",
    "gamma_recursion_linear",
    "inflated_margins",
    "inflated_membership",
    "inflated_set_spec",
    "linear_kappa",
    "obstacle_chain",
    "psi_chain_eval",
    "regularity_margin",
    "safety_filter",
]
