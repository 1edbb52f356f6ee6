"""Tests for the eISS control Lyapunov function and the min-norm controller."""

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from cbf_safety import finite_difference_gradient
from clf_control import (
    ClfInfeasibleError,
    EissClf,
    clf_constraint,
    clf_controller,
    clf_decrease_bound,
    clf_lie,
    clf_quadratic_bounds,
    double_integrator_clf,
    quadratic_clf,
)
from dynamics_models import ContractViolation, double_integrator_drag

THETA = np.array([0.8, 1.4])


class ClfFunctionTests(unittest.TestCase):
    def setUp(self):
        self.sys = double_integrator_drag()
        self.clf = double_integrator_clf(c3=1.0, eps_v=20.0)

    def test_origin(self):
        lie = clf_lie(self.clf, self.sys, np.zeros(4))
        self.assertEqual(self.clf.value(np.zeros(4)), 0.0)
        self.assertEqual(lie.LfV, 0.0)
        assert_array_equal(lie.LFV, np.zeros(2))
        assert_array_equal(lie.LgV, np.zeros(2))

    def test_gradient_hand_value(self):
        x = np.array([1.0, 0.0, 0.0, 0.0])
        assert_allclose(self.clf.gradient(x), [2, 0, 1, 0])
        assert_allclose(clf_lie(self.clf, self.sys, x).LgV, [1, 0])
        self.assertAlmostEqual(self.clf.value(x), 1.0)

    def test_value_matches_definition(self):
        x = np.array([0.3, -1.2, 0.7, 2.0])
        q, qd = x[:2], x[2:]
        self.assertAlmostEqual(self.clf.value(x), 0.5 * q @ q + 0.5 * (q + qd) @ (q + qd))

    def test_gradient_and_drift_derivative_match_finite_differences(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            x = rng.uniform(-3, 3, 4)
            numeric = finite_difference_gradient(self.clf.value, x)
            analytic = self.clf.gradient(x)
            self.assertLessEqual(np.linalg.norm(analytic - numeric), 1e-5 * max(1.0, np.linalg.norm(analytic)))
            f = self.sys.f(x)
            eps = 1e-6
            directional = (self.clf.value(x + eps * f) - self.clf.value(x - eps * f)) / (2 * eps)
            lie = clf_lie(self.clf, self.sys, x)
            self.assertLessEqual(abs(directional - lie.LfV), 1e-5 * max(1.0, abs(lie.LfV)))

    def test_quadratic_bounds(self):
        c1, c2 = clf_quadratic_bounds(self.clf)
        self.assertAlmostEqual(c1, (3 - np.sqrt(5)) / 4)
        self.assertAlmostEqual(c2, (3 + np.sqrt(5)) / 4)
        self.assertEqual(clf_quadratic_bounds(quadratic_clf(np.eye(4))), (0.5, 0.5))
        rng = np.random.default_rng(22)
        for x in rng.uniform(-3, 3, (1000, 4)):
            value = self.clf.value(x)
            self.assertGreaterEqual(value, c1 * x @ x - 1e-12)
            self.assertLessEqual(value, c2 * x @ x + 1e-12)

    def test_bounds_need_a_quadratic_form(self):
        clf = EissClf(value=lambda x: float(x @ x), gradient=lambda x: 2 * x)
        with self.assertRaises(ContractViolation):
            clf_quadratic_bounds(clf)

    def test_constants_must_be_positive(self):
        with self.assertRaises(ValueError):
            double_integrator_clf(c3=0.0)

    def test_decrease_bound(self):
        self.assertAlmostEqual(clf_decrease_bound(self.clf, 2.0, 1.0), -2.0 + 5.0)


class ClfConstraintTests(unittest.TestCase):
    def setUp(self):
        self.sys = double_integrator_drag()
        self.clf = double_integrator_clf(c3=1.0, eps_v=20.0)

    def test_origin_constraint_is_trivial(self):
        constraint = clf_constraint(self.clf, self.sys, np.zeros(4), THETA)
        assert_array_equal(constraint.a, np.zeros(2))
        self.assertEqual(constraint.b, 0.0)
        assert_array_equal(clf_controller(self.clf, self.sys, np.zeros(4), THETA), np.zeros(2))

    def test_spot_value(self):
        x = np.array([1.0, 0.0, 0.0, 0.0])
        constraint = clf_constraint(self.clf, self.sys, x, THETA)
        assert_allclose(constraint.a, [1, 0])
        self.assertAlmostEqual(constraint.b, -1.0)
        assert_allclose(clf_controller(self.clf, self.sys, x, [5.0, -2.0]), [-1, 0])

    def test_bound_is_affine_in_estimate(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            x = rng.uniform(-3, 3, 4)
            shift = rng.normal(size=2)
            lie = clf_lie(self.clf, self.sys, x)
            base = clf_constraint(self.clf, self.sys, x, THETA).b
            moved = clf_constraint(self.clf, self.sys, x, THETA + shift).b
            self.assertAlmostEqual(moved - base, -float(lie.LFV @ shift), places=9)

    def test_controller_satisfies_decrease_condition(self):
        rng = np.random.default_rng(24)
        for _ in range(1000):
            x = rng.uniform(-3, 3, 4)
            theta_hat = rng.uniform(0, 3, 2)
            u = clf_controller(self.clf, self.sys, x, theta_hat)
            lie = clf_lie(self.clf, self.sys, x)
            v_dot_hat = lie.LfV + lie.LFV @ theta_hat + lie.LgV @ u
            bound = -self.clf.c3 * self.clf.value(x) - lie.LFV @ lie.LFV / self.clf.eps_v
            self.assertLessEqual(v_dot_hat, bound + 1e-9 * max(1.0, abs(bound)))

    def test_infeasible_when_control_cannot_act_on_v(self):
        # V = |x|^2 / 2 at rest away from the origin: LgV = qd = 0 while V > 0
        clf = quadratic_clf(np.eye(4))
        with self.assertRaises(ClfInfeasibleError):
            clf_controller(clf, self.sys, np.array([1.0, 0.0, 0.0, 0.0]), THETA)


if __name__ == "__main__":
    unittest.main()
