import os
from unittest.mock import MagicMock

import numpy as np
import pytest

from app.config import ExperimentConfig, ScenarioConfig
from logics.channel_logic import stream_layout
from logics.harness_logic import (STATUS_INFEASIBLE, ExperimentLogic, emit_convergence_report,
                                  run_batch, validate_solution)
from logics.inner_logic import BcSolution
from logics.outer_logic import (STATUS_CONVERGED, STATUS_STALLED, OuterTrace,
                                PowerMinimizationLogic)
from tests.helpers import scalar_csi
from utils.archive import load_json, load_solution, read_csv
from utils.errors import ContractViolationError
from utils.utils import EXIT_CONVERGED, EXIT_INFEASIBLE, EXIT_STALLED

ARTIFACTS = ("trace.csv", "targets.csv", "power.csv", "solution.json", "mac_state.json",
             "validation.json", "feasibility.json", "samples.npz", "checkpoint.npz")

def infeasible_scenario():
    return ScenarioConfig(users=1, tx_antennas=1, rx_antennas=1, streams=[1], rates=[4.0],
                          samples=200, error_variance=1.0, seed=5)

def test_trivial_run_writes_every_artifact(trivial_scenario, tmp_path):
    experiment = ExperimentConfig(trivial_scenario, output_dir=str(tmp_path))
    result = ExperimentLogic(experiment).run_experiment()
    assert result.exit_code == EXIT_CONVERGED and result.status == STATUS_CONVERGED
    for name in ARTIFACTS:
        assert os.path.exists(tmp_path / name), name

    header, data = read_csv(tmp_path / "trace.csv")
    assert data.shape[0] == 1 and result.iterations == 1
    assert data[0, header.index("total_power")] == pytest.approx(1.0, abs=1e-8)
    assert result.total_power_db == pytest.approx(0.0, abs=1e-7)

    validation = load_json(tmp_path / "validation.json")
    assert validation["rate_margin"][0] >= -1e-9
    assert validation["samples"] == 20
    assert load_json(tmp_path / "feasibility.json")["feasible"] is True
    assert load_json(tmp_path / "solution.json")["scenario"]["seed"] == trivial_scenario.seed

def test_infeasible_run_reports_and_exits(tmp_path):
    experiment = ExperimentConfig(infeasible_scenario(), output_dir=str(tmp_path))
    result = ExperimentLogic(experiment).run_experiment()
    assert result.exit_code == EXIT_INFEASIBLE and result.status == STATUS_INFEASIBLE
    report = load_json(tmp_path / "feasibility.json")
    assert report["feasible"] is False
    assert report["bound_rhs"] > report["lhs"]
    assert not os.path.exists(tmp_path / "trace.csv")

def test_runs_with_the_same_seed_are_identical(small_scenario, tmp_path):
    scenario = small_scenario.replace(max_outer_iters=2)
    for name in ("a", "b"):
        ExperimentLogic(ExperimentConfig(scenario, output_dir=str(tmp_path / name))).run_experiment()
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()

def test_replayed_samples_reproduce_the_run(small_scenario, tmp_path):
    scenario = small_scenario.replace(max_outer_iters=2)
    ExperimentLogic(ExperimentConfig(scenario, output_dir=str(tmp_path / "a"))).run_experiment()
    replay = ExperimentConfig(scenario.replace(seed=12345), output_dir=str(tmp_path / "b"),
                              samples_file=str(tmp_path / "a" / "samples.npz"))
    ExperimentLogic(replay).run_experiment()
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()

def test_stalled_run_exits_with_status_two(trivial_scenario, tmp_path, monkeypatch):
    monkeypatch.setattr(PowerMinimizationLogic, "_line_search", lambda self, rho, state, grad: None)
    result = ExperimentLogic(ExperimentConfig(trivial_scenario, output_dir=str(tmp_path))).run_experiment()
    assert result.exit_code == EXIT_STALLED
    assert result.status == STATUS_STALLED
    assert result.iterations == 1
    assert load_json(tmp_path / "solution.json")["status"] == STATUS_STALLED

def test_notifier_receives_the_summary(trivial_scenario, tmp_path):
    notifier = MagicMock()
    experiment = ExperimentConfig(trivial_scenario, output_dir=str(tmp_path))
    result = ExperimentLogic(experiment, notifier).run_experiment()
    notifier.send_run_summary.assert_called_once()
    assert notifier.send_run_summary.call_args.args[0] is result

def test_empty_trace_cannot_be_reported(tmp_path):
    with pytest.raises(ContractViolationError):
        emit_convergence_report(OuterTrace(layout=stream_layout([1])), str(tmp_path))

def test_zero_power_solution_fails_validation():
    solution = BcSolution(precoders=[np.zeros((1, 1), dtype=complex)], stream_mse=np.ones(1),
                          stream_mmse=np.ones(1), total_power=0.0, mac_power=0.0, rates=np.zeros(1),
                          rho_streams=np.array([1.0]), beta2=np.zeros(1))
    report = validate_solution(solution, scalar_csi(), fresh_seed=1, count=3)
    np.testing.assert_array_equal(report.rates, [0.0])
    np.testing.assert_allclose(report.rate_margin, [-1.0])
    assert report.power_db == float("-inf")

def test_saved_solution_validates_identically(trivial_scenario, tmp_path):
    ExperimentLogic(ExperimentConfig(trivial_scenario, output_dir=str(tmp_path))).run_experiment()
    solution = load_solution(tmp_path / "solution.json")
    csi = scalar_csi()
    first = validate_solution(solution, csi, fresh_seed=8, count=10)
    second = validate_solution(load_solution(tmp_path / "solution.json"), csi, fresh_seed=8, count=10)
    np.testing.assert_array_equal(first.rates, second.rates)
    np.testing.assert_allclose(first.rates, [1.0], atol=1e-9)

def test_batch_runs_consecutive_seeds(trivial_scenario, tmp_path):
    experiment = ExperimentConfig(trivial_scenario, output_dir=str(tmp_path))
    results, worst = run_batch(experiment, 2, workers=2)
    assert worst == EXIT_CONVERGED
    assert sorted(os.path.basename(r.output_dir) for r in results) == ["seed_3", "seed_4"]
    assert os.path.exists(tmp_path / "seed_4" / "trace.csv")

@pytest.mark.slow
def test_two_user_simulation_scenario(tmp_path):
    experiment = ExperimentConfig(ScenarioConfig(), output_dir=str(tmp_path), validation_samples=5000)
    result = ExperimentLogic(experiment).run_experiment()
    assert result.status == STATUS_CONVERGED and result.exit_code == EXIT_CONVERGED
    assert result.iterations - 1 <= 30

    header, trace = read_csv(tmp_path / "trace.csv")
    assert np.all(np.diff(trace[:, header.index("total_power")]) < 0)
    for k, rate in enumerate(experiment.scenario.rates):
        columns = [i for i, name in enumerate(header) if name.startswith(f"rho_k{k + 1}_")]
        assert len(columns) == experiment.scenario.streams[k]
        np.testing.assert_allclose(trace[:, columns].sum(axis=1), rate, rtol=0, atol=1e-12)

    validation = load_json(tmp_path / "validation.json")
    assert validation["power_residual"] < 1e-6
    assert min(validation["rate_margin"]) >= -0.05
