"""Command-line front end for the adaptive safety simulator.

    python cli.py simulate   --config configs/reference.cfg --out results/run
    python cli.py montecarlo --config configs/reference.cfg --runs 25 --laws gd,rls_forget
    python cli.py sweep      --config configs/reference.cfg
    python cli.py eps-sweep  --config configs/reference.cfg

Exit codes: 0 success, 2 config error, 3 simulation abort, 4 monitor failure
(only with --strict).
"""

import argparse
import logging
import sys
import time
from typing import List, Optional

from experiment_store import (
    RunManifest,
    save_eps_sweep,
    save_manifest,
    save_montecarlo,
    save_sweep,
    save_trajectory,
)
from services.experiment_service import montecarlo_checks, run_eps_sweep, run_montecarlo, run_sweep, sweep_ordering_holds
from services.simulation_service import monitors_pass, run_simulation
from sim_config import DEFAULT_OUT_DIR, ConfigError, SimConfig, dump_config, load_config

logger = logging.getLogger("adaptive_safety")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_MONITOR = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptive-safety",
        description="Modular adaptive CLF/CBF control experiments on the double integrator with drag.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Log run progress.")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "Run one closed-loop trajectory and write trajectory.csv."),
        ("montecarlo", "Run sampled batches per estimator law and write summary/runs CSVs."),
        ("sweep", "Compare laws across initial parameter estimates and write sweep.csv."),
        ("eps-sweep", "Vary eps_h and write eps_sweep.csv."),
    ):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--config", help="Path to a key = value config file.")
        command.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                             help="Override one config key (repeatable).")
        command.add_argument("--out", default=DEFAULT_OUT_DIR, help="Output directory.")
        command.add_argument("--seed", type=int, help="Seed (overrides sim.seed).")
        command.add_argument("--strict", action="store_true", help="Exit 4 when an acceptance monitor fails.")
        if name == "montecarlo":
            command.add_argument("--runs", type=int, help="Runs per law (overrides sim.runs).")
            command.add_argument("--laws", help="Comma list of laws (overrides experiment.laws).")
            command.add_argument("--workers", type=int, help="Worker processes for the batch.")
        if name == "sweep":
            command.add_argument("--laws", help="Comma list of laws (overrides sweep.laws).")
    return parser


def resolve_config(args: argparse.Namespace) -> SimConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"sim.seed={args.seed}")
    if getattr(args, "runs", None) is not None:
        overrides.append(f"sim.runs={args.runs}")
    if getattr(args, "laws", None):
        section = "experiment" if args.command == "montecarlo" else "sweep"
        overrides.append(f"{section}.laws={args.laws}")
    return load_config(args.config, overrides)


def cmd_simulate(config: SimConfig, args: argparse.Namespace, manifest: RunManifest) -> int:
    result = run_simulation(config)
    trajectory = result["trajectory"]
    if trajectory is not None:
        manifest.outputs.append(save_trajectory(trajectory, args.out))
    manifest.monitors = result["monitors"]
    if not result["success"]:
        manifest.status = "aborted"
        manifest.partial = bool(result["partial"])
        manifest.error = result["error"]
        logger.error(result["error"])
        return EXIT_ABORT
    print(f"final |x| = {result['monitors']['final_x_norm']:.6g}, min psi0 = {result['monitors']['min_psi0']:.6g}, "
          f"delta_hat = {result['monitors']['delta_hat']:.6g}")
    if args.strict and not monitors_pass(result["monitors"]):
        manifest.status = "monitor_failed"
        return EXIT_MONITOR
    return EXIT_OK


def cmd_montecarlo(config: SimConfig, args: argparse.Namespace, manifest: RunManifest) -> int:
    summaries = run_montecarlo(config, workers=getattr(args, "workers", None))
    failed_runs = 0
    for law, summary in summaries.items():
        manifest.outputs.extend(save_montecarlo(summary, args.out))
        failed_runs += sum(not outcome.succeeded for outcome in summary.outcomes)
        print(f"{law.value}: mean |theta_tilde| {summary.curves['ttil_mean'].iloc[0]:.4g} -> "
              f"{summary.curves['ttil_mean'].iloc[-1]:.4g}, runs with violations: "
              f"{int((summary.runs['violations'] > 0).sum())}/{len(summary.runs)}")
    checks = montecarlo_checks(summaries)
    manifest.monitors = {"checks": checks, "failed_runs": failed_runs}
    if failed_runs:
        manifest.status = "partial"
        manifest.partial = True
    if args.strict:
        ok = (
            all(checks["safety"].values())
            and all(checks["stabilization"].values())
            and checks.get("rls_slowest", True)
            and checks.get("forget_not_slower_than_gd", True)
            and failed_runs == 0
        )
        if not ok:
            manifest.status = "monitor_failed"
            return EXIT_MONITOR
    return EXIT_OK


def cmd_sweep(config: SimConfig, args: argparse.Namespace, manifest: RunManifest) -> int:
    records = run_sweep(config)
    manifest.outputs.append(save_sweep(records, args.out))
    ordering = sweep_ordering_holds(records)
    manifest.monitors = {"gd_below_rls_forget": ordering, "failed_runs": sum(r.error is not None for r in records)}
    print(f"sweep rows: {len(records)}, GD closer to the obstacle than RLS-forget for some estimate: {ordering}")
    if args.strict and not ordering:
        manifest.status = "monitor_failed"
        return EXIT_MONITOR
    return EXIT_OK


def cmd_eps_sweep(config: SimConfig, args: argparse.Namespace, manifest: RunManifest) -> int:
    records = run_eps_sweep(config)
    manifest.outputs.append(save_eps_sweep(records, args.out))
    manifest.monitors = {"failed_runs": sum(r.error is not None for r in records)}
    for record in records:
        print(f"eps_h={record.eps_h:.4g}: min psi0={record.min_psi0:.4g}, gamma1={record.gamma1:.4g}, "
              f"max |u|={record.max_u_norm:.4g}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "montecarlo": cmd_montecarlo,
    "sweep": cmd_sweep,
    "eps-sweep": cmd_eps_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
    except ConfigError as error:
        print(f"config error: {error}", file=sys.stderr)
        return EXIT_CONFIG

    manifest = RunManifest(command=args.command, config=dump_config(config), seed=config.sim.seed)
    started = time.perf_counter()
    code = COMMANDS[args.command](config, args, manifest)
    manifest.duration_s = time.perf_counter() - started
    save_manifest(manifest, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
