"""
Artifact Archive

Reading and writing every file a run produces: convergence CSVs, JSON
reports and solutions, npz sample sets and checkpoints.

CSV values use 17 significant digits and JSON floats use Python's
shortest round-trip repr, so re-imported numbers are bit-identical.
Complex arrays are stored in JSON as nested [re, im] pairs.
"""

import json
import os

import numpy as np

from app.logger import logger
from utils.errors import ConfigurationError

CSV_FORMAT = "%.17g"

def _complex_to_json(array):
    array = np.asarray(array, dtype=complex)
    return np.stack([array.real, array.imag], axis=-1).tolist()

def _complex_from_json(nested):
    array = np.asarray(nested, dtype=float)
    return array[..., 0] + 1j * array[..., 1]

def ensure_output_dir(path):
    """
    Create an output directory and check that it is writable.

    Raises:
        ConfigurationError: If the directory cannot be created or written.
    """
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ConfigurationError(f"Cannot create output directory {path}: {e}") from e
    if not os.access(path, os.W_OK):
        raise ConfigurationError(f"Output directory {path} is not writable")
    return path

def save_json(path, payload):
    """Write a JSON document (sorted keys, two-space indent)."""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.debug(f"Wrote {path}")

def load_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)

def _write_csv(path, header, rows):
    np.savetxt(path, np.asarray(rows, dtype=float), fmt=CSV_FORMAT, delimiter=",",
               header=",".join(header), comments="")
    logger.debug(f"Wrote {path} ({len(rows)} rows)")

def read_csv(path):
    """
    Read a CSV written by this module.

    Returns:
        tuple: (header list, (rows, columns) float array)
    """
    with open(path, 'r', encoding='utf-8') as f:
        header = f.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data

def write_trace(path, trace):
    """Full trace: iteration, power (linear, dB), step, halvings, then rho, xi and active per stream."""
    labels = trace.layout.labels()
    header = (["iteration", "total_power", "power_db", "step", "halvings"]
              + [f"rho_{label}" for label in labels]
              + [f"xi_{label}" for label in labels]
              + [f"active_{label}" for label in labels])
    rows = [[row.iteration, row.total_power, row.power_db, row.step, row.halvings]
            + list(row.rho) + list(row.xi) + [float(x) for x in row.active]
            for row in trace.rows]
    _write_csv(path, header, rows)

def write_targets(path, trace):
    """Per-stream targets per accepted iteration, one column per (k,i)."""
    header = ["iteration"] + trace.layout.labels()
    _write_csv(path, header, [[row.iteration] + list(row.rho) for row in trace.rows])

def write_power(path, trace):
    """Total power per accepted iteration, linear and 10·log10."""
    header = ["iteration", "total_power", "power_db"]
    _write_csv(path, header, [[row.iteration, row.total_power, row.power_db] for row in trace.rows])

def solution_to_dict(solution):
    return {
        "precoders": [_complex_to_json(p) for p in solution.precoders],
        "stream_mse": solution.stream_mse.tolist(),
        "stream_mmse": solution.stream_mmse.tolist(),
        "total_power": solution.total_power,
        "mac_power": solution.mac_power,
        "rates": solution.rates.tolist(),
        "rho_streams": solution.rho_streams.tolist(),
        "beta2": solution.beta2.tolist(),
    }

def solution_from_dict(payload):
    from logics.inner_logic import BcSolution

    return BcSolution(
        precoders=[_complex_from_json(p) for p in payload["precoders"]],
        stream_mse=np.asarray(payload["stream_mse"], dtype=float),
        stream_mmse=np.asarray(payload["stream_mmse"], dtype=float),
        total_power=float(payload["total_power"]),
        mac_power=float(payload["mac_power"]),
        rates=np.asarray(payload["rates"], dtype=float),
        rho_streams=np.asarray(payload["rho_streams"], dtype=float),
        beta2=np.asarray(payload["beta2"], dtype=float),
    )

def save_solution(path, solution, extra=None):
    """
    Write a BcSolution as JSON.

    Args:
        path (str): Target file.
        solution (BcSolution): Solution to store.
        extra (dict, optional): Additional top-level keys (status, scenario...).
    """
    payload = solution_to_dict(solution)
    payload.update(extra or {})
    save_json(path, payload)

def load_solution(path):
    return solution_from_dict(load_json(path))

def mac_state_to_dict(state):
    return {
        "streams": list(state.layout.streams),
        "xi": state.xi.tolist(),
        "tau": _complex_to_json(state.tau),
        "g_tilde": _complex_to_json(state.g_tilde),
        "active": [bool(x) for x in state.active],
        "achieved_mmse": state.achieved_mmse.tolist(),
        "equalizers": _complex_to_json(state.equalizers()),
        "iterations": state.iterations,
        "converged": state.converged,
    }

def save_mac_state(path, state):
    save_json(path, mac_state_to_dict(state))

def load_mac_state(path, inner):
    """
    Rebuild a MacState; moments are re-estimated from the stored precoders.

    Args:
        path (str): JSON file written by save_mac_state.
        inner (InnerSolverLogic): Solver owning the training samples of the run.
    """
    from logics.channel_logic import moments_from_whitened

    payload = load_json(path)
    tau = _complex_from_json(payload["tau"])
    return inner.make_state(
        xi=np.asarray(payload["xi"], dtype=float),
        tau=tau,
        g_tilde=_complex_from_json(payload["g_tilde"]),
        moments=moments_from_whitened(inner.whitened, tau, inner.layout),
        active=np.asarray(payload["active"], dtype=bool),
        iterations=int(payload["iterations"]),
        converged=bool(payload["converged"]),
    )

def save_sample_set(path, sample_set, csi):
    """Write channel samples plus the CSI they were drawn from as an npz archive."""
    np.savez(path, samples=sample_set.samples, seed=np.uint64(sample_set.seed),
             stream=np.int64(sample_set.stream), h_mean=csi.h_mean, c_err=csi.c_err,
             c_eta=csi.c_eta, phases=np.asarray([] if csi.phases is None else csi.phases, dtype=float))
    logger.info(f"Channel samples saved to {path}")

def load_sample_set(path):
    """
    Read an archive written by save_sample_set.

    Returns:
        tuple: (ChannelSampleSet, PartialCsi)
    """
    from logics.channel_logic import ChannelSampleSet, PartialCsi

    with np.load(path) as archive:
        phases = archive["phases"]
        csi = PartialCsi(h_mean=archive["h_mean"], c_err=archive["c_err"], c_eta=archive["c_eta"],
                         phases=phases if phases.size else None)
        sample_set = ChannelSampleSet(samples=archive["samples"], seed=int(archive["seed"]),
                                      stream=int(archive["stream"]))
    logger.info(f"Channel samples loaded from {path} (M={sample_set.count})")
    return sample_set, csi

def save_checkpoint(path, rho, state, trace):
    """Write the outer-loop state after an accepted iteration."""
    rows = trace.rows
    np.savez(path,
             rho=rho, xi=state.xi, tau=state.tau, g_tilde=state.g_tilde, active=state.active,
             inner_iterations=np.int64(state.iterations),
             row_iteration=np.array([r.iteration for r in rows], dtype=np.int64),
             row_power=np.array([r.total_power for r in rows]),
             row_rho=np.array([r.rho for r in rows]),
             row_xi=np.array([r.xi for r in rows]),
             row_step=np.array([r.step for r in rows]),
             row_active=np.array([r.active for r in rows], dtype=bool),
             row_halvings=np.array([r.halvings for r in rows], dtype=np.int64))
    logger.debug(f"Checkpoint written: {path} (iteration {rows[-1].iteration})")

def load_checkpoint(path):
    """
    Read a checkpoint.

    Returns:
        dict: Arrays keyed as written by save_checkpoint.
    """
    with np.load(path) as archive:
        return {key: archive[key] for key in archive.files}
