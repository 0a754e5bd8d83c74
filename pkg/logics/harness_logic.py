"""
Harness Logic

Runs complete experiments: scenario construction, sampling, outer power
minimization, downlink conversion, out-of-sample validation and export of
every artifact. Also runs batches of independent seeds in a process pool.

Files written to the output directory:
    trace.csv, targets.csv, power.csv   convergence data, one row per accepted iteration
    solution.json                       downlink precoders and MSEs
    mac_state.json                      final dual MAC filters and powers
    validation.json                     out-of-sample rates and MMSEs
    feasibility.json                    feasibility report (always, also on failure)
    samples.npz                         training channel samples (optional)
    checkpoint.npz                      outer-loop checkpoint (optional)
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from app.logger import logger
from logics.channel_logic import (VALIDATION_STREAM, build_scenario, sample_channels,
                                  stream_layout, whiten_samples)
from logics.mse_logic import average_rate, jensen_bound, mmse_rate_bound, sigma_stats
from logics.outer_logic import STATUS_CONVERGED, PowerMinimizationLogic
from utils.archive import (ensure_output_dir, load_sample_set, save_json, save_mac_state,
                           save_sample_set, save_solution, write_power, write_targets, write_trace)
from utils.errors import ConfigurationError, ContractViolationError, InfeasibleTargetsError
from utils.utils import EXIT_CONVERGED, EXIT_INFEASIBLE, EXIT_STALLED, power_to_db

STATUS_INFEASIBLE = "infeasible"

@dataclass(frozen=True, eq=False)
class ValidationReport:
    """
    Out-of-sample check of a downlink solution.

    Margins are signed: rate_margin = achieved - target (bits), mmse_margin =
    target - achieved, so positive values mean the constraint holds.
    """
    rates: np.ndarray
    rate_targets: np.ndarray
    rate_margin: np.ndarray
    stream_mmse: np.ndarray
    stream_targets: np.ndarray
    mmse_margin: np.ndarray
    jensen_bound: np.ndarray
    mmse_bound: np.ndarray
    total_power: float
    power_db: float
    power_residual: float
    mse_residual: float
    samples: int
    seed: int

    def to_dict(self):
        return {
            "rates": self.rates.tolist(),
            "rate_targets": self.rate_targets.tolist(),
            "rate_margin": self.rate_margin.tolist(),
            "stream_mmse": self.stream_mmse.tolist(),
            "stream_targets": self.stream_targets.tolist(),
            "mmse_margin": self.mmse_margin.tolist(),
            "jensen_bound": self.jensen_bound.tolist(),
            "mmse_bound": self.mmse_bound.tolist(),
            "total_power": self.total_power,
            "power_db": self.power_db,
            "power_residual": self.power_residual,
            "mse_residual": self.mse_residual,
            "samples": self.samples,
            "seed": self.seed,
        }

@dataclass(frozen=True)
class ExperimentResult:
    status: str
    exit_code: int
    output_dir: str
    total_power_db: float = None
    iterations: int = 0
    rate_margin: tuple = ()

    def to_dict(self):
        return {
            "status": self.status,
            "exit_code": self.exit_code,
            "output_dir": self.output_dir,
            "total_power_db": self.total_power_db,
            "iterations": self.iterations,
            "rate_margin": list(self.rate_margin),
        }

def emit_convergence_report(trace, output_dir):
    """
    Write trace.csv, targets.csv and power.csv for an outer trace.

    Raises:
        ContractViolationError: If the trace has no rows.
    """
    if not trace.rows:
        raise ContractViolationError("Cannot report an empty trace")
    write_trace(os.path.join(output_dir, "trace.csv"), trace)
    write_targets(os.path.join(output_dir, "targets.csv"), trace)
    write_power(os.path.join(output_dir, "power.csv"), trace)
    logger.info(f"Convergence report written to {output_dir} ({len(trace.rows)} rows)")

def validate_solution(solution, csi, fresh_seed, count):
    """
    Re-evaluate a solution on a fresh, independent sample set.

    Args:
        solution (BcSolution): Solution to check.
        csi (PartialCsi): Channel statistics the samples are drawn from.
        fresh_seed (int): Seed of the validation samples.
        count (int): Number of validation samples.

    Returns:
        ValidationReport
    """
    layout = stream_layout([p.shape[1] for p in solution.precoders])
    fresh = sample_channels(csi, count, fresh_seed, stream=VALIDATION_STREAM)
    whitened = whiten_samples(fresh, csi)

    rates = average_rate(solution.precoders, whitened)
    stats = sigma_stats(solution.precoders, whitened)
    rate_targets = np.array([piece.sum() for piece in layout.split(solution.rho_streams)])
    stream_targets = np.exp2(-solution.rho_streams)
    stream_mmse = stats.stream_mmse()

    report = ValidationReport(
        rates=rates,
        rate_targets=rate_targets,
        rate_margin=rates - rate_targets,
        stream_mmse=stream_mmse,
        stream_targets=stream_targets,
        mmse_margin=stream_targets - stream_mmse,
        jensen_bound=jensen_bound(stats),
        mmse_bound=mmse_rate_bound(stats),
        total_power=solution.total_power,
        power_db=power_to_db(solution.total_power),
        power_residual=solution.power_residual if solution.mac_power > 0 else 0.0,
        mse_residual=float(np.max(np.abs(solution.stream_mse - stream_targets), initial=0.0)),
        samples=int(count),
        seed=int(fresh_seed),
    )
    logger.info(f"Validation on {count} fresh samples: rates {np.round(rates, 4).tolist()} "
                f"vs targets {rate_targets.tolist()}")
    return report

class ExperimentLogic:
    """
    Class for running one complete experiment.

    This class wires the channel, solver and archive layers together for an
    ExperimentConfig, writes every artifact and maps the outcome to an exit
    status (converged, stalled or infeasible).
    """

    def __init__(self, experiment, notifier=None):
        """
        Initialize ExperimentLogic.

        Args:
            experiment (ExperimentConfig): Scenario plus output settings.
            notifier (TelegramNotifier, optional): Receives a run summary when set.
        """
        self.experiment = experiment
        self.scenario = experiment.scenario
        self.notifier = notifier

    def _channels(self, output_dir):
        if self.experiment.samples_file:
            sample_set, csi = load_sample_set(self.experiment.samples_file)
            expected = (self.scenario.users, self.scenario.tx_antennas, self.scenario.rx_antennas)
            if (csi.users, csi.tx_antennas, csi.rx_antennas) != expected:
                raise ConfigurationError(f"Sample archive dimensions {csi.h_mean.shape} do not match "
                                         f"the scenario (K, N, R) = {expected}")
        else:
            csi = build_scenario(self.scenario)
            sample_set = sample_channels(csi, self.scenario.samples, self.scenario.seed)
        if self.experiment.export_samples:
            save_sample_set(os.path.join(output_dir, "samples.npz"), sample_set, csi)
        return csi, sample_set

    def _finish(self, result, validation=None):
        if self.notifier is not None:
            self.notifier.send_run_summary(result, self.scenario, validation)
        return result

    def run_experiment(self, resume=False):
        """
        Execute scenario -> sampling -> minimization -> downlink -> validation.

        Args:
            resume (bool): Continue from the checkpoint in the output directory.

        Returns:
            ExperimentResult: Exit code 0 converged, 2 stalled, 3 infeasible.

        Raises:
            ConfigurationError: If the output directory or the sample archive is unusable.
        """
        output_dir = ensure_output_dir(self.experiment.output_dir)
        logger.info(f"Running experiment {self.scenario} -> {output_dir}")
        csi, sample_set = self._channels(output_dir)

        checkpoint = os.path.join(output_dir, "checkpoint.npz") if self.experiment.checkpoint else None
        logic = PowerMinimizationLogic(self.scenario, csi, sample_set, init=self.experiment.init,
                                       checkpoint_path=checkpoint)
        try:
            solution, trace = logic.minimize_power(resume=resume)
        except InfeasibleTargetsError as e:
            logger.error(f"Infeasible targets: {e}")
            payload = {"status": STATUS_INFEASIBLE, "message": str(e)}
            if e.report is not None:
                payload.update(e.report.to_dict())
            save_json(os.path.join(output_dir, "feasibility.json"), payload)
            return self._finish(ExperimentResult(STATUS_INFEASIBLE, EXIT_INFEASIBLE, output_dir))

        emit_convergence_report(trace, output_dir)
        save_solution(os.path.join(output_dir, "solution.json"), solution,
                      extra={"status": trace.status, "scenario": self.scenario.to_dict()})
        save_mac_state(os.path.join(output_dir, "mac_state.json"), logic.final_state)
        save_json(os.path.join(output_dir, "feasibility.json"),
                  dict(logic.report.to_dict(), status=trace.status))

        seed = self.experiment.validation_seed
        validation = validate_solution(solution, csi, self.scenario.seed if seed is None else seed,
                                       self.experiment.validation_samples)
        save_json(os.path.join(output_dir, "validation.json"), validation.to_dict())

        exit_code = EXIT_CONVERGED if trace.status == STATUS_CONVERGED else EXIT_STALLED
        result = ExperimentResult(
            status=trace.status,
            exit_code=exit_code,
            output_dir=output_dir,
            total_power_db=power_to_db(solution.total_power),
            iterations=len(trace.rows),
            rate_margin=tuple(float(x) for x in validation.rate_margin),
        )
        logger.info(f"Experiment finished: {result.status}, {result.iterations} rows, "
                    f"{result.total_power_db:.6f} dB")
        return self._finish(result, validation)

def _run_seed(payload):
    """Process-pool worker: rebuild the configs and run one seed."""
    from app.config import ExperimentConfig, ScenarioConfig

    scenario = ScenarioConfig(**payload["scenario"])
    experiment = ExperimentConfig(scenario, **payload["experiment"])
    return ExperimentLogic(experiment).run_experiment(resume=payload["resume"])

def run_batch(experiment, count, resume=False, workers=None):
    """
    Run seeds seed, seed+1, ..., seed+count-1 concurrently.

    Every run gets its own RNG streams and its own <output_dir>/seed_<s>/ directory.

    Args:
        experiment (ExperimentConfig): Base configuration.
        count (int): Number of seeds.
        resume (bool): Resume each run from its own checkpoint.
        workers (int, optional): Pool size, defaults to the CPU count.

    Returns:
        tuple: (list of ExperimentResult, worst exit code)
    """
    if count < 1:
        raise ConfigurationError(f"Batch size must be >= 1, got {count}")
    payloads = []
    for offset in range(count):
        seed = experiment.scenario.seed + offset
        payloads.append({
            "scenario": dict(experiment.scenario.to_dict(), seed=seed),
            "experiment": {
                "output_dir": os.path.join(experiment.output_dir, f"seed_{seed}"),
                "init": experiment.init,
                "validation_samples": experiment.validation_samples,
                "validation_seed": experiment.validation_seed,
                "export_samples": experiment.export_samples,
                "checkpoint": experiment.checkpoint,
            },
            "resume": resume,
        })

    logger.info(f"Running batch of {count} seeds from {experiment.scenario.seed}")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_run_seed, payloads))
    worst = max(result.exit_code for result in results)
    for result in results:
        logger.info(f"  {result.output_dir}: {result.status} (exit {result.exit_code})")
    return results, worst
