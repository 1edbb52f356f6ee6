"""Online parameter estimation from integrated regressors.

Along a state-control trajectory the dynamics integrate to

    x(t) - x(t - dt_w) - int f - int g u = (int F) theta,

so each window yields a pair (Y, F) with Y = F theta that needs only state
measurements. Pairs are kept in a history stack chosen to maximize the minimum
singular value of sum F_j^T F_j, and the estimate follows

    theta_hat_dot = Gamma sum F_j^T (Y_j - F_j theta_hat)

with one of four gain-matrix laws.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, List, Optional

import numpy as np
from scipy.linalg import expm

from dynamics_models import ContractViolation, ParametricAffineSystem

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_DT = 0.1
INSERTION_SLACK = 1e-12
_TIME_TOL = 1e-9


class GainLaw(str, Enum):
    """Gain-matrix dynamics selectable with estimator.law."""

    GD = "gd"
    RLS = "rls"
    RLS_FORGET = "rls_forget"
    RLS_VARFORGET = "rls_varforget"


def parse_law(tag) -> GainLaw:
    try:
        return GainLaw(tag)
    except ValueError as error:
        known = ", ".join(law.value for law in GainLaw)
        raise ContractViolation(f"Unknown estimator law '{tag}'. Known laws: {known}") from error


# ======================================================
# 1. INTEGRATION WINDOW
# ======================================================
@dataclass(frozen=True)
class RegressorPair:
    Y: np.ndarray
    F: np.ndarray


@dataclass(frozen=True)
class _WindowSample:
    t: float
    x: np.ndarray
    f: np.ndarray
    F: np.ndarray
    g: np.ndarray
    cum_f: np.ndarray
    cum_F: np.ndarray
    cum_gu: np.ndarray


class IntegrationWindow:
    """Buffer of (t, x, u) samples spanning the last window_dt seconds.

    The control stored with a sample is the one held on the interval that
    ends at that sample; it is ignored for the first sample. Running
    trapezoid sums are kept per sample so a window integral is the difference
    between the newest and the oldest retained sample.
    """

    def __init__(self, system: ParametricAffineSystem, window_dt: float = DEFAULT_WINDOW_DT):
        if window_dt <= 0.0:
            raise ContractViolation("Integration window length must be positive")
        self.system = system
        self.window_dt = float(window_dt)
        self.samples: Deque[_WindowSample] = deque()

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def span(self) -> float:
        if len(self.samples) < 2:
            return 0.0
        return self.samples[-1].t - self.samples[0].t

    def is_ready(self) -> bool:
        return len(self.samples) >= 2 and self.span >= self.window_dt - _TIME_TOL

    def append(self, t: float, x, u) -> None:
        sys = self.system
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        f, F, g = sys.f(x), sys.F(x), sys.g(x)
        if not self.samples:
            sample = _WindowSample(
                t=float(t), x=x, f=f, F=F, g=g,
                cum_f=np.zeros(sys.n), cum_F=np.zeros((sys.n, sys.p)), cum_gu=np.zeros(sys.n),
            )
        else:
            last = self.samples[-1]
            h = float(t) - last.t
            if h <= 0.0:
                raise ContractViolation(f"Window timestamps must increase (got {t} after {last.t})")
            sample = _WindowSample(
                t=float(t), x=x, f=f, F=F, g=g,
                cum_f=last.cum_f + 0.5 * h * (last.f + f),
                cum_F=last.cum_F + 0.5 * h * (last.F + F),
                cum_gu=last.cum_gu + 0.5 * h * ((last.g + g) @ u),
            )
        self.samples.append(sample)
        cutoff = sample.t - self.window_dt + _TIME_TOL
        while len(self.samples) >= 2 and self.samples[1].t <= cutoff:
            self.samples.popleft()


def window_regressor(window: IntegrationWindow, sys: ParametricAffineSystem, t: float) -> Optional[RegressorPair]:
    """Form (Y, F) over [t - window_dt, t], or None while the window is warming up."""
    if (sys.n, sys.p) != (window.system.n, window.system.p):
        raise ContractViolation("Window was filled with a system of different dimensions")
    if not window.is_ready():
        return None
    first, last = window.samples[0], window.samples[-1]
    if abs(last.t - t) > _TIME_TOL:
        raise ContractViolation(f"Window ends at t={last.t}, not at requested t={t}")
    Y = (last.x - first.x) - (last.cum_f - first.cum_f) - (last.cum_gu - first.cum_gu)
    F = last.cum_F - first.cum_F
    return RegressorPair(Y=Y, F=F)


# ======================================================
# 2. HISTORY STACK
# ======================================================
def _sigma_min(matrix: np.ndarray) -> float:
    return float(np.linalg.svd(matrix, compute_uv=False)[-1])


class HistoryStack:
    """At most `capacity` regressor pairs with cached A = sum F^T F and b = sum F^T Y."""

    def __init__(self, capacity: int, p: int):
        if capacity < 1:
            raise ContractViolation("History stack capacity must be at least 1")
        self.capacity = int(capacity)
        self.p = int(p)
        self.entries: List[RegressorPair] = []
        self._gram = np.zeros((self.capacity, self.p, self.p))
        self._cross = np.zeros((self.capacity, self.p))
        self.information_matrix = np.zeros((self.p, self.p))
        self.cross_term = np.zeros(self.p)
        self.sigma_min = 0.0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) >= self.capacity

    def _store(self, slot: int, pair: RegressorPair, gram: np.ndarray, cross: np.ndarray) -> None:
        if slot == len(self.entries):
            self.entries.append(pair)
        else:
            self.entries[slot] = pair
        self.information_matrix = self.information_matrix - self._gram[slot] + gram
        self.cross_term = self.cross_term - self._cross[slot] + cross
        self._gram[slot] = gram
        self._cross[slot] = cross
        self.sigma_min = _sigma_min(self.information_matrix)


def svd_max_insert(stack: HistoryStack, pair: RegressorPair) -> bool:
    """Insert a pair if the stack has room, else replace the slot that most raises sigma_min(A)."""
    F = np.asarray(pair.F, dtype=float)
    Y = np.asarray(pair.Y, dtype=float)
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(Y))):
        raise ContractViolation("Regressor pair has non-finite entries")
    if F.shape[1] != stack.p:
        raise ContractViolation(f"Regressor has {F.shape[1]} columns, stack expects {stack.p}")
    gram = F.T @ F
    cross = F.T @ Y
    if not stack.is_full:
        stack._store(len(stack.entries), RegressorPair(Y=Y, F=F), gram, cross)
        return True
    # Weyl: no swap can raise sigma_min(A) by more than trace(F^T F).
    if float(np.trace(gram)) < 0.5 * INSERTION_SLACK:
        return False

    candidates = stack.information_matrix[None, :, :] - stack._gram + gram[None, :, :]
    scores = np.linalg.svd(candidates, compute_uv=False)[:, -1]
    slot = int(np.argmax(scores))
    if scores[slot] <= stack.sigma_min + INSERTION_SLACK:
        return False
    previous = stack.sigma_min
    stack._store(slot, RegressorPair(Y=Y, F=F), gram, cross)
    logger.debug("History stack slot %d replaced; sigma_min %.6g -> %.6g", slot, previous, stack.sigma_min)
    return True


def recompute_information_matrix(stack: HistoryStack) -> np.ndarray:
    """Sum F_j^T F_j from scratch over the current entries."""
    total = np.zeros((stack.p, stack.p))
    for entry in stack.entries:
        total += entry.F.T @ entry.F
    return total


# ======================================================
# 3. UPDATE LAWS
# ======================================================
def prediction_error(stack: HistoryStack, theta_hat) -> float:
    """E(theta_hat) = sum |Y_j - F_j theta_hat|^2."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    return float(sum(np.sum((entry.Y - entry.F @ theta_hat) ** 2) for entry in stack.entries))


def prediction_error_gradient(stack: HistoryStack, theta_hat) -> np.ndarray:
    """Gradient of E, equal to -2 sum F_j^T (Y_j - F_j theta_hat)."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    return -2.0 * (stack.cross_term - stack.information_matrix @ theta_hat)


def theta_hat_dot(stack: HistoryStack, theta_hat, gamma) -> np.ndarray:
    """Gamma sum F_j^T (Y_j - F_j theta_hat), i.e. -Gamma grad(E) / 2."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    return np.asarray(gamma) @ (stack.cross_term - stack.information_matrix @ theta_hat)


def gain_law_rhs(stack: HistoryStack, law, beta: float = 0.0, gamma_bar: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    """Gamma -> Gamma_dot for the selected law, with the current stack bound.

    gd:            0
    rls:           -Gamma A Gamma
    rls_forget:    beta Gamma - Gamma A Gamma
    rls_varforget: beta (1 - |Gamma|_2 / gamma_bar) Gamma - Gamma A Gamma

    The stack must not change while the returned function is in use.
    """
    law = parse_law(law)
    A = stack.information_matrix
    if law is GainLaw.GD:
        return np.zeros_like
    if law is GainLaw.RLS:
        return lambda gamma: -gamma @ A @ gamma
    if law is GainLaw.RLS_FORGET:
        return lambda gamma: beta * gamma - gamma @ A @ gamma
    return lambda gamma: beta * (1.0 - np.linalg.norm(gamma, 2) / gamma_bar) * gamma - gamma @ A @ gamma


def gamma_dot(stack: HistoryStack, gamma, law, beta: float = 0.0, gamma_bar: float = 1.0) -> np.ndarray:
    """Right-hand side of the selected gain-matrix law (see gain_law_rhs)."""
    return gain_law_rhs(stack, law, beta, gamma_bar)(np.asarray(gamma, dtype=float))


def symmetrize(gamma: np.ndarray) -> np.ndarray:
    return 0.5 * (gamma + gamma.T)


def estimation_error_norm(theta_hat, theta_true) -> float:
    """|theta - theta_hat|."""
    return float(np.linalg.norm(np.asarray(theta_true, dtype=float) - np.asarray(theta_hat, dtype=float)))


def frozen_stack_oracle(information_matrix, gamma, theta_tilde0, t: float) -> np.ndarray:
    """Closed-form error expm(-Gamma A t) theta_tilde0 for a constant gain and frozen stack."""
    rate = np.asarray(gamma, dtype=float) @ np.asarray(information_matrix, dtype=float)
    return expm(-rate * t) @ np.asarray(theta_tilde0, dtype=float)


# ======================================================
# 4. ESTIMATOR STATE
# ======================================================
@dataclass
class EstimatorState:
    """Mutable per-simulation learning state."""

    theta_hat: np.ndarray
    gamma: np.ndarray
    stack: HistoryStack
    window: IntegrationWindow
    law: GainLaw = GainLaw.GD
    beta: float = 0.0
    gamma_bar: float = 1.0
    accepted_insertions: int = field(default=0)

    def __post_init__(self):
        self.law = parse_law(self.law)
        self.theta_hat = np.asarray(self.theta_hat, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        p = self.theta_hat.shape[0]
        if self.gamma.shape != (p, p):
            raise ContractViolation(f"Gain matrix must be {p}x{p}")
        if not np.allclose(self.gamma, self.gamma.T) or np.linalg.eigvalsh(self.gamma)[0] <= 0.0:
            raise ContractViolation("Gain matrix must be symmetric positive definite")
        if self.law in (GainLaw.RLS_FORGET, GainLaw.RLS_VARFORGET) and self.beta <= 0.0:
            raise ContractViolation(f"Law '{self.law.value}' needs a positive beta")
        if self.law is GainLaw.RLS_VARFORGET and self.gamma_bar <= 0.0:
            raise ContractViolation("Law 'rls_varforget' needs a positive gamma_bar")

    def record_sample(self, t: float, x, u) -> bool:
        """Append a sample and, once the window is warm, offer its pair to the stack."""
        self.window.append(t, x, u)
        pair = window_regressor(self.window, self.window.system, t)
        if pair is None:
            return False
        accepted = svd_max_insert(self.stack, pair)
        if accepted:
            self.accepted_insertions += 1
        return accepted


def new_estimator(
    system: ParametricAffineSystem,
    theta_hat0,
    law,
    capacity: int,
    gamma0: float,
    beta: float = 0.0,
    gamma_bar: float = 1.0,
    window_dt: float = DEFAULT_WINDOW_DT,
) -> EstimatorState:
    """Build an estimator with Gamma(0) = gamma0 I."""
    return EstimatorState(
        theta_hat=np.array(theta_hat0, dtype=float),
        gamma=gamma0 * np.eye(system.p),
        stack=HistoryStack(capacity, system.p),
        window=IntegrationWindow(system, window_dt),
        law=law,
        beta=beta,
        gamma_bar=gamma_bar,
    )


__all__ = [
    "DEFAULT_WINDOW_DT",
    "EstimatorState",
    "GainLaw",
    "HistoryStack",
    "IntegrationWindow",
    "RegressorPair",
    "estimation_error_norm",
    "frozen_stack_oracle",
    "gain_law_rhs",
    "gamma_dot",
    "new_estimator",
    "parse_law",
    "prediction_error",
    "prediction_error_gradient",
    "recompute_information_matrix",
    "svd_max_insert",
    "symmetrize",
    "theta_hat_dot",
]
