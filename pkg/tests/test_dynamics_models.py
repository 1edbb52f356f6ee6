"""Tests for the parametric system model and the built-in double integrator."""

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from dynamics_models import (
    ContractViolation,
    MODEL_REGISTRY,
    ParametricAffineSystem,
    actuation,
    double_integrator_drag,
    drift,
    estimated_dynamics,
    get_model,
    matched_map,
    register_model,
    regressor,
    true_dynamics,
)

THETA = np.array([0.8, 1.4])


class DoubleIntegratorTests(unittest.TestCase):
    def setUp(self):
        self.sys = double_integrator_drag()

    def test_drift_copies_velocity_block(self):
        assert_array_equal(drift(self.sys, np.zeros(4)), np.zeros(4))
        assert_array_equal(drift(self.sys, [1, 2, 0.5, -0.5]), [0.5, -0.5, 0, 0])
        assert_array_equal(drift(self.sys, [0, 0, 3, 4]), [3, 4, 0, 0])

    def test_regressor_is_signed_quadratic_drag(self):
        assert_array_equal(regressor(self.sys, np.zeros(4)), np.zeros((4, 2)))
        F = regressor(self.sys, [0, 0, 3, 4])
        assert_array_equal(F[:2], np.zeros((2, 2)))
        assert_allclose(F[2:], [[-15, 0], [0, -20]])
        assert_allclose(regressor(self.sys, [0, 0, 1, 0])[2:], [[-1, 0], [0, 0]])

    def test_actuation_is_constant(self):
        expected = [[0, 0], [0, 0], [1, 0], [0, 1]]
        assert_array_equal(actuation(self.sys, np.zeros(4)), expected)
        assert_array_equal(actuation(self.sys, [5, 5, 5, 5]), expected)
        self.assertEqual(actuation(self.sys, np.zeros(4)).shape, (4, 2))

    def test_true_dynamics_hand_values(self):
        assert_array_equal(true_dynamics(self.sys, np.zeros(4), np.zeros(2), THETA), np.zeros(4))
        assert_allclose(true_dynamics(self.sys, [0, 0, 1, 0], [0, 0], THETA), [1, 0, -0.8, 0])
        assert_allclose(true_dynamics(self.sys, [0, 0, 1, 0], [2, 3], THETA), [1, 0, 1.2, 3])

    def test_estimated_dynamics_differs_by_regressor_times_error(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            x = rng.uniform(-3, 3, 4)
            u = rng.uniform(-3, 3, 2)
            theta_hat = rng.uniform(0, 3, 2)
            gap = true_dynamics(self.sys, x, u, THETA) - estimated_dynamics(self.sys, x, u, theta_hat)
            assert_allclose(gap, regressor(self.sys, x) @ (THETA - theta_hat), atol=1e-12)

    def test_estimated_dynamics_limits(self):
        x, u = np.array([0.3, -0.2, 1.1, 0.4]), np.array([0.5, -1.0])
        assert_array_equal(estimated_dynamics(self.sys, x, u, THETA), true_dynamics(self.sys, x, u, THETA))
        assert_allclose(estimated_dynamics(self.sys, x, u, np.zeros(2)), drift(self.sys, x) + actuation(self.sys, x) @ u)

    def test_regressor_is_locally_lipschitz_on_a_box(self):
        rng = np.random.default_rng(3)
        ratios = []
        for _ in range(500):
            x, y = rng.uniform(-3, 3, (2, 4))
            ratios.append(np.linalg.norm(regressor(self.sys, x) - regressor(self.sys, y)) / np.linalg.norm(x - y))
        # |d/dv (v |v|)| <= 2 |v| on the box, so the ratio stays below 2 * 3 * sqrt(2)
        self.assertLess(max(ratios), 2 * 3 * np.sqrt(2) + 1e-9)

    def test_uncertainty_is_matched(self):
        x = np.array([0.1, 0.2, -0.7, 1.3])
        phi = matched_map(self.sys, x)
        self.assertIsNotNone(phi)
        assert_allclose(actuation(self.sys, x) @ phi, regressor(self.sys, x), atol=1e-12)

    def test_dimension_contracts(self):
        with self.assertRaises(ContractViolation):
            drift(self.sys, np.zeros(3))
        with self.assertRaises(ContractViolation):
            true_dynamics(self.sys, np.zeros(4), np.zeros(3), THETA)
        with self.assertRaises(ContractViolation):
            true_dynamics(self.sys, np.zeros(4), np.zeros(2), [0.8])
        with self.assertRaises(ContractViolation):
            drift(self.sys, [np.nan, 0, 0, 0])


class ModelRegistryTests(unittest.TestCase):
    def test_builtin_model_is_registered(self):
        sys = get_model("double_integrator_drag")
        self.assertEqual((sys.n, sys.m, sys.p), (4, 2, 2))
        self.assertEqual(sys.labels(), ("q1", "q2", "qd1", "qd2"))

    def test_unknown_model_names_known_ones(self):
        with self.assertRaises(ContractViolation) as context:
            get_model("pendulum")
        self.assertIn("double_integrator_drag", str(context.exception))

    def test_registered_unmatched_model(self):
        def scalar_unmatched():
            return ParametricAffineSystem(
                name="scalar_unmatched",
                n=2,
                m=1,
                p=1,
                f=lambda x: np.array([x[1], 0.0]),
                F=lambda x: np.array([[x[0]], [0.0]]),
                g=lambda x: np.array([[0.0], [1.0]]),
            )

        register_model("scalar_unmatched", scalar_unmatched)
        try:
            sys = get_model("scalar_unmatched")
            self.assertEqual(sys.labels(), ("x1", "x2"))
            self.assertIsNone(matched_map(sys, [1.0, 0.0]))
        finally:
            MODEL_REGISTRY.pop("scalar_unmatched", None)

    def test_register_rejects_blank_name(self):
        with self.assertRaises(ContractViolation):
            register_model("  ", double_integrator_drag)


if __name__ == "__main__":
    unittest.main()
