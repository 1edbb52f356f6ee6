"""Tests for the UI-neutral simulation and experiment services."""

import unittest
from unittest.mock import patch

import numpy as np

from estimation_engine import GainLaw
from services.experiment_service import montecarlo_checks, run_montecarlo, sweep_ordering_holds
from services.simulation_service import inflation_levels, monitors_pass, run_simulation
from sim_config import parse_config
from sim_engine import SimulationAbort, SweepRecord, Trajectory


def short_config(*lines):
    return parse_config("\n".join(["sim.horizon = 0.5", "sim.dt = 0.01", *lines]))


def _record(law, theta_hat0, min_psi0):
    trajectory = Trajectory.allocate(1, 4, 2, 2, 2, ("q1", "q2", "qd1", "qd2"))
    trajectory.psi[:, 0] = min_psi0
    return SweepRecord(law=law, theta_hat0=np.array(theta_hat0, dtype=float), trajectory=trajectory)


class SimulationServiceTests(unittest.TestCase):
    def test_successful_run_reports_monitors(self):
        result = run_simulation(short_config(), x0=[-2.0, 2.0, 0.0, 0.0], theta_hat0=[0.0, 0.0])
        self.assertTrue(result["success"])
        monitors = result["monitors"]
        self.assertEqual(monitors["rows"], 51)
        self.assertEqual(monitors["issf_violations"], 0)
        self.assertEqual(monitors["cbf_violations"], 0)
        self.assertAlmostEqual(monitors["gammas"][0], monitors["delta_hat"] ** 2 / 2.0)
        self.assertTrue(monitors_pass(monitors))

    def test_unfiltered_run_reports_clf_monitor(self):
        result = run_simulation(short_config("cbf.enabled = false"), x0=[-2.0, 2.0, 0.0, 0.0], theta_hat0=[0.0, 0.0])
        self.assertIn("clf_decrease_violations", result["monitors"])
        self.assertNotIn("cbf_violations", result["monitors"])

    def test_abort_returns_partial_result(self):
        result = run_simulation(short_config(), x0=[-1.0, 1.0, 0.0, 0.0], theta_hat0=[0.8, 1.4])
        self.assertFalse(result["success"])
        self.assertTrue(result["partial"])
        self.assertIn("step 0", result["error"])
        self.assertEqual(result["monitors"], {"rows": 0})

    def test_contract_violation_is_reported(self):
        result = run_simulation(short_config(), x0=[0.0, 0.0], theta_hat0=[0.8, 1.4])
        self.assertFalse(result["success"])
        self.assertIsNone(result["trajectory"])

    def test_inflation_levels(self):
        self.assertEqual(inflation_levels(short_config(), 1.0)["gammas"], [0.5, 0.5])
        self.assertFalse(inflation_levels(short_config(), -1.0)["success"])

    def test_monitors_pass_flags_violations(self):
        self.assertFalse(monitors_pass({"issf_violations": 2}))
        self.assertFalse(monitors_pass({"clf_decrease_violations": 1}))
        self.assertTrue(monitors_pass({"rows": 0}))


class ExperimentServiceTests(unittest.TestCase):
    def test_montecarlo_checks(self):
        config = short_config("sim.runs = 2")
        summaries = run_montecarlo(config, laws=["gd", "rls", "rls_forget"], workers=1)
        self.assertEqual(list(summaries), [GainLaw.GD, GainLaw.RLS, GainLaw.RLS_FORGET])
        checks = montecarlo_checks(summaries)
        self.assertEqual(set(checks["safety"]), {"gd", "rls", "rls_forget"})
        self.assertIn("rls_slowest", checks)
        self.assertIn("forget_not_slower_than_gd", checks)
        self.assertEqual(set(checks["convergence_ratio"]), {"gd", "rls", "rls_forget"})

    def test_montecarlo_uses_configured_laws(self):
        with patch("services.experiment_service.monte_carlo") as monte_carlo:
            run_montecarlo(short_config("experiment.laws = gd, rls_varforget"))
        laws = [call.kwargs["law"] for call in monte_carlo.call_args_list]
        self.assertEqual(laws, [GainLaw.GD, GainLaw.RLS_VARFORGET])

    def test_sweep_ordering(self):
        records = [
            _record(GainLaw.GD, [0.8, 1.4], 1.0),
            _record(GainLaw.RLS_FORGET, [0.8, 1.4], 1.0),
            _record(GainLaw.GD, [3.0, 3.0], -0.2),
            _record(GainLaw.RLS_FORGET, [3.0, 3.0], 0.1),
        ]
        self.assertTrue(sweep_ordering_holds(records))
        self.assertFalse(sweep_ordering_holds(records[:2]))


if __name__ == "__main__":
    unittest.main()
