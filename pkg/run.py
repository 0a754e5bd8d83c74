#!/usr/bin/env python3
"""
PowerMin Main Entry Point

Runs one power-minimization experiment (or a batch of seeds) from the
command line. Values given as flags override the configuration file.

Exit codes:
    0  converged
    1  usage or configuration error
    2  stalled (step-halving or iteration cap reached)
    3  infeasible targets

Use `run.py serve` to start the experiment webhook service instead.
"""

import argparse
import os
import sys

# Add the app directory to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

class UsageParser(argparse.ArgumentParser):
    """Argument parser whose usage errors map to exit status 1 (2 means stalled)."""

    def error(self, message):
        from utils.utils import EXIT_USAGE, exit_with_error

        self.print_usage(sys.stderr)
        exit_with_error(f"{self.prog}: {message}", EXIT_USAGE)

def build_parser():
    parser = UsageParser(
        description="Minimize BC transmit power under average-rate constraints with partial CSI")
    parser.add_argument("mode", nargs="?", choices=["run", "serve"], default="run",
                        help="run an experiment (default) or serve the webhook")
    parser.add_argument("--config", type=str, default=None, help="path to config.json")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (unsigned 64-bit)")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--init", choices=["equal", "random"], default=None, help="initial rate split")
    parser.add_argument("--samples", type=int, default=None, help="Monte Carlo samples M")
    parser.add_argument("--max-iters", type=int, default=None, help="maximum outer iterations")
    parser.add_argument("--gamma", type=float, default=None, help="outer convergence threshold")
    parser.add_argument("--step", type=float, default=None, help="initial step size s0")
    parser.add_argument("--validate-seed", type=int, default=None, help="seed of the validation samples")
    parser.add_argument("--validation-samples", type=int, default=None, help="number of validation samples")
    parser.add_argument("--samples-file", type=str, default=None, help="replay channel samples from an npz archive")
    parser.add_argument("--batch", type=int, default=None, help="run this many consecutive seeds in parallel")
    parser.add_argument("--resume", action="store_true", help="resume from checkpoint.npz in the output directory")
    return parser

def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.mode == "serve":
        from app.flask_app import start_server
        start_server()
        return 0

    from app.config import ApplicationConfig
    from app.logger import logger
    from logics.harness_logic import ExperimentLogic, run_batch
    from utils.errors import ConfigurationError, PowerMinError
    from utils.telegram_notifier import TelegramNotifier
    from utils.utils import EXIT_USAGE, exit_with_error

    try:
        config = ApplicationConfig(args.config)
        scenario = config.scenario.replace(seed=args.seed, samples=args.samples,
                                           max_outer_iters=args.max_iters, gamma=args.gamma,
                                           step=args.step)
        experiment = config.experiment.replace(scenario=scenario, output_dir=args.out, init=args.init,
                                               validation_seed=args.validate_seed,
                                               validation_samples=args.validation_samples,
                                               samples_file=args.samples_file)
    except ConfigurationError as e:
        exit_with_error(f"Invalid configuration: {e}", EXIT_USAGE)

    try:
        if args.batch:
            _, exit_code = run_batch(experiment, args.batch, resume=args.resume)
            return exit_code
        notifier = TelegramNotifier(config.telegram) if config.telegram.enabled else None
        result = ExperimentLogic(experiment, notifier).run_experiment(resume=args.resume)
    except ConfigurationError as e:
        exit_with_error(f"Invalid configuration: {e}", EXIT_USAGE)
    except PowerMinError as e:
        exit_with_error(f"Run failed: {e}", EXIT_USAGE)

    logger.info(f"Exit status {result.exit_code} ({result.status})")
    return result.exit_code

if __name__ == "__main__":
    sys.exit(main())
