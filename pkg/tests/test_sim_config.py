"""Tests for the config models and the dotted key-value format."""

import os
import tempfile
import unittest

from estimation_engine import GainLaw
from sim_config import (
    ConfigError,
    SimConfig,
    build_config,
    dump_config,
    known_keys,
    load_config,
    parse_config,
    with_overrides,
)

REFERENCE_CONFIG = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs", "reference.cfg")


class ConfigDefaultsTests(unittest.TestCase):
    def test_reference_file_matches_defaults(self):
        self.assertEqual(load_config(REFERENCE_CONFIG).model_dump(), SimConfig().model_dump())

    def test_reference_values(self):
        config = SimConfig()
        self.assertEqual(config.system.true_theta, (0.8, 1.4))
        self.assertEqual(config.cbf.obstacle_center, (-1.0, 1.0))
        self.assertEqual(config.estimator.law, GainLaw.RLS_FORGET)
        self.assertEqual(config.steps, 20000)
        self.assertEqual(len(config.experiment.laws), 4)

    def test_every_key_is_known(self):
        keys = known_keys()
        self.assertIn("estimator.law", keys)
        self.assertIn("eps_sweep.values", keys)
        self.assertEqual(len(keys), len(set(keys)))


class ConfigParsingTests(unittest.TestCase):
    def test_comments_vectors_and_boxes(self):
        config = parse_config(
            "# comment line\n"
            "estimator.law = gd   # trailing comment\n"
            "system.true_theta = 1.0, 2.0\n"
            "experiment.theta_hat0_box = 0:1, 0.5:2\n"
            "sweep.theta_hat0 = 0, 0; 3, 3\n"
            "cbf.enabled = false\n"
        )
        self.assertEqual(config.estimator.law, GainLaw.GD)
        self.assertEqual(config.system.true_theta, (1.0, 2.0))
        self.assertEqual(config.experiment.theta_hat0_box, ((0.0, 1.0), (0.5, 2.0)))
        self.assertEqual(config.sweep.theta_hat0, ((0.0, 0.0), (3.0, 3.0)))
        self.assertFalse(config.cbf.enabled)

    def test_overrides_apply_after_file(self):
        config = parse_config("sim.seed = 3\n", ["sim.seed=9", "experiment.x0=0,0,0,0"])
        self.assertEqual(config.sim.seed, 9)
        self.assertEqual(config.experiment.x0, (0.0, 0.0, 0.0, 0.0))

    def test_later_lines_win(self):
        self.assertEqual(parse_config("sim.runs = 3\nsim.runs = 5\n").sim.runs, 5)

    def test_unknown_key_is_named(self):
        with self.assertRaises(ConfigError) as context:
            parse_config("estimator.gain = 3\n")
        self.assertEqual(context.exception.key, "estimator.gain")

    def test_invalid_value_names_the_field(self):
        with self.assertRaises(ConfigError) as context:
            parse_config("sim.dt = -1\n")
        self.assertIn("sim.dt", str(context.exception))

    def test_unknown_law_is_rejected(self):
        with self.assertRaises(ConfigError):
            parse_config("estimator.law = kalman\n")

    def test_cross_field_invariants(self):
        with self.assertRaises(ConfigError):
            parse_config("sim.dt = 0.2\n")
        with self.assertRaises(ConfigError):
            parse_config("system.true_theta = 1.0\n")
        with self.assertRaises(ConfigError):
            parse_config("experiment.x0_box = 1:0, 0:1, 0:0, 0:0\n")
        with self.assertRaises(ConfigError):
            parse_config("eps_sweep.values = 1, 0\n")

    def test_malformed_lines(self):
        with self.assertRaises(ConfigError):
            parse_config("sim.seed 3\n")
        with self.assertRaises(ConfigError):
            parse_config("experiment.x0_box = 0-1, 0:1, 0:0, 0:0\n")
        with self.assertRaises(ConfigError):
            parse_config("", ["sim.seed"])

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(os.path.join(tempfile.gettempdir(), "does-not-exist.cfg"))

    def test_non_utf8_file_is_a_config_error(self):
        with tempfile.TemporaryDirectory() as folder:
            path = os.path.join(folder, "latin1.cfg")
            with open(path, "wb") as file:
                file.write(b"sim.seed = 3 # \xff\xfe\n")
            with self.assertRaises(ConfigError) as context:
                load_config(path)
            self.assertEqual(context.exception.key, path)
            self.assertIn("UTF-8", str(context.exception))


class ConfigRoundTripTests(unittest.TestCase):
    def test_dump_reparses_to_same_config(self):
        config = parse_config(
            "estimator.law = rls_varforget\nsim.seed = 18446744073709551615\n"
            "experiment.theta_hat0 = 0.1, 2.9\ncbf.eps_h = 0.0625\nsim.dt = 0.002\n"
        )
        self.assertEqual(parse_config(dump_config(config)).model_dump(), config.model_dump())

    def test_dump_lists_every_key(self):
        text = dump_config(SimConfig())
        for key in known_keys():
            self.assertIn(f"{key} =", text)

    def test_dump_through_a_file(self):
        config = parse_config("sim.horizon = 3.5\n")
        with tempfile.TemporaryDirectory() as folder:
            path = os.path.join(folder, "snapshot.cfg")
            with open(path, "w", encoding="utf-8") as file:
                file.write(dump_config(config))
            self.assertEqual(load_config(path).model_dump(), config.model_dump())

    def test_with_overrides_revalidates(self):
        config = with_overrides(SimConfig(), cbf={"eps_h": 0.25})
        self.assertEqual(config.cbf.eps_h, 0.25)
        with self.assertRaises(ConfigError):
            with_overrides(SimConfig(), cbf={"eps_h": -1.0})

    def test_build_config_from_flat_values(self):
        config = build_config({"clf.c3": "2", "clf.eps_v": "10"})
        self.assertEqual((config.clf.c3, config.clf.eps_v), (2.0, 10.0))


if __name__ == "__main__":
    unittest.main()
