"""Full-horizon reference experiments.

These take minutes; set ADAPTIVE_SAFETY_SLOW_TESTS=1 to run them.
"""

import os
import time
import unittest

import numpy as np

from estimation_engine import GainLaw
from services.experiment_service import ISS_FINAL_TOLERANCE, montecarlo_checks, run_montecarlo, run_sweep, sweep_ordering_holds
from sim_config import SimConfig, with_overrides
from sim_engine import build_closed_loop, clf_decrease_violations, simulate

SLOW = os.getenv("ADAPTIVE_SAFETY_SLOW_TESTS") == "1"
# four laws x 25 runs x 20 s at dt = 1 ms on a default worker pool
MONTECARLO_BUDGET_S = 120.0


@unittest.skipUnless(SLOW, "set ADAPTIVE_SAFETY_SLOW_TESTS=1 to run the reference batch")
class ReferenceBatchTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = SimConfig()
        started = time.perf_counter()
        cls.summaries = run_montecarlo(cls.config)
        cls.elapsed = time.perf_counter() - started
        cls.checks = montecarlo_checks(cls.summaries)

    def test_batch_finishes_within_budget(self):
        self.assertLess(self.elapsed, MONTECARLO_BUDGET_S)

    def test_every_run_stays_in_inflated_set(self):
        self.assertTrue(all(self.checks["safety"].values()), self.checks["safety"])

    def test_every_run_reaches_the_origin(self):
        for law, summary in self.summaries.items():
            self.assertTrue((summary.runs["final_x_norm"] <= ISS_FINAL_TOLERANCE).all(), law.value)

    def test_forgetting_laws_converge(self):
        for law in (GainLaw.RLS_FORGET, GainLaw.RLS_VARFORGET):
            self.assertLess(self.checks["convergence_ratio"][law.value], 0.05)

    def test_convergence_ordering(self):
        self.assertTrue(self.checks["rls_slowest"])
        self.assertTrue(self.checks["forget_not_slower_than_gd"])


@unittest.skipUnless(SLOW, "set ADAPTIVE_SAFETY_SLOW_TESTS=1 to run the reference batch")
class ReferenceRunTests(unittest.TestCase):
    def test_clf_decrease_certificate_without_filter(self):
        config = with_overrides(SimConfig(), cbf={"enabled": False})
        loop = build_closed_loop(config)
        for theta_hat0 in ([0.0, 0.0], [3.0, 3.0], [0.0, 3.0]):
            trajectory = simulate(config, [-2.0, 2.0, 0.0, 0.0], theta_hat0)
            self.assertEqual(clf_decrease_violations(trajectory, loop.clf).size, 0, theta_hat0)

    def test_gradient_descent_gets_closer_to_the_obstacle(self):
        records = run_sweep(SimConfig())
        self.assertTrue(sweep_ordering_holds(records))
        exact = [record for record in records if np.allclose(record.theta_hat0, [0.8, 1.4])]
        self.assertTrue(all(record.min_psi0 > 0.0 for record in exact))


if __name__ == "__main__":
    unittest.main()
