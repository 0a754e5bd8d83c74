"""
Outer Solver Logic

Projected-gradient search over the per-stream split of every user's rate
target. Each step differentiates the inner minimum power with respect to
the per-stream targets, projects onto the per-user simplices and re-solves
the inner problem, halving the step until the power decreases.
"""

import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from app.logger import logger
from logics.channel_logic import INIT_STREAM, moments_from_whitened, stream_layout
from logics.inner_logic import InnerSolverLogic, mac_to_bc, update_receivers
from logics.mse_logic import feasibility_report, mac_mmse
from utils.archive import load_checkpoint, save_checkpoint
from utils.errors import InfeasibleTargetsError, InnerConvergenceError, NumericalError
from utils.utils import power_to_db

# A projected step shorter than this leaves the split unchanged
MOVE_TOL = 1e-12

STATUS_CONVERGED = "converged"
STATUS_STALLED = "stalled"

@dataclass(frozen=True, eq=False)
class RateAllocation:
    """
    Per-stream rate targets together with the per-user totals they split.

    Attributes:
        rho_streams: (d,) nonnegative targets
        rates: (K,) per-user targets rho_k
        layout: StreamLayout
    """
    rho_streams: np.ndarray
    rates: np.ndarray
    layout: object

    @property
    def user_sums(self):
        return np.array([piece.sum() for piece in self.layout.split(self.rho_streams)])

    @property
    def active(self):
        return self.rho_streams > 0

    @classmethod
    def equal(cls, rates, layout):
        """Split every rho_k equally over its d_k streams."""
        rates = np.asarray(rates, dtype=float)
        rho = np.repeat(rates / np.asarray(layout.streams), layout.streams)
        return cls(rho_streams=rho, rates=rates, layout=layout)

    @classmethod
    def random(cls, rates, layout, seed):
        """Uniformly random split on every simplex (Dirichlet(1, ..., 1) scaled by rho_k)."""
        rates = np.asarray(rates, dtype=float)
        rng = np.random.default_rng([int(seed), INIT_STREAM])
        pieces = [rng.dirichlet(np.ones(d)) * rho_k for d, rho_k in zip(layout.streams, rates)]
        return cls(rho_streams=np.concatenate(pieces), rates=rates, layout=layout)

@dataclass(frozen=True, eq=False)
class GradientBundle:
    """
    Attributes:
        jacobian: (d, d) dMMSE/dxi with dummy entries for inactive streams
        target_diag: (d,) 2^{-rho}
        grad: (d,) dP_T/drho
    """
    jacobian: np.ndarray
    target_diag: np.ndarray
    grad: np.ndarray

@dataclass(frozen=True)
class TraceRow:
    iteration: int
    total_power: float
    rho: tuple
    xi: tuple
    step: float
    active: tuple
    halvings: int

    @property
    def power_db(self):
        return power_to_db(self.total_power)

@dataclass
class OuterTrace:
    """Append-only record of the accepted outer iterations."""
    layout: object
    rows: list = field(default_factory=list)
    status: str = "running"

    def append(self, iteration, state, rho, step, halvings):
        self.rows.append(TraceRow(
            iteration=int(iteration),
            total_power=state.total_power,
            rho=tuple(float(x) for x in rho),
            xi=tuple(float(x) for x in state.xi),
            step=float(step),
            active=tuple(bool(x) for x in state.active),
            halvings=int(halvings),
        ))

    @property
    def powers(self):
        return np.array([row.total_power for row in self.rows])

def compute_jacobian(state):
    """
    Jacobian of the per-stream MAC MMSEs with respect to the powers.

    Row a is evaluated with the actual powers of the active streams and the
    stream's own virtual power (1 for an inactive stream). Inactive streams
    cause no interference, so their columns are zero off the diagonal.

    Returns:
        ndarray: (d, d) real matrix with negative diagonal and nonnegative off-diagonal.
    """
    g = state.g_tilde
    useful = state.moments.useful_gains(g)
    cross = state.moments.cross_gains(g)
    noise = np.einsum('an,an->a', g.conj(), g).real
    streams = len(state.xi)
    base = np.where(state.active, state.xi, 0.0)

    jacobian = np.zeros((streams, streams))
    for a in range(streams):
        powers = base.copy()
        powers[a] = state.xi_virtual[a]
        y = cross[a] @ powers + noise[a]
        jacobian[a] = np.where(state.active, powers[a] * useful[a] * cross[a] / y ** 2, 0.0)
        jacobian[a, a] = -(useful[a] / y ** 2) * (y - powers[a] * cross[a, a])
    return jacobian

def power_gradient(jacobian, rho_streams):
    """
    Gradient of the total power: dP/drho_a = -ln2 · (J^{-T} 1)_a · 2^{-rho_a}.

    Args:
        jacobian (ndarray): (d, d) output of compute_jacobian.
        rho_streams (ndarray): (d,) targets.

    Returns:
        GradientBundle

    Raises:
        NumericalError: If the Jacobian is singular.
    """
    target_diag = np.exp2(-np.asarray(rho_streams, dtype=float))
    try:
        weights = linalg.solve(jacobian.T, np.ones(jacobian.shape[0]))
    except linalg.LinAlgError as e:
        raise NumericalError(f"Singular MMSE Jacobian: {e}") from e
    if not np.all(np.isfinite(weights)):
        raise NumericalError("Non-finite power gradient")
    grad = -np.log(2.0) * weights * target_diag
    return GradientBundle(jacobian=jacobian, target_diag=target_diag, grad=grad)

def project_per_user(rho_prime, rho_k):
    """
    Euclidean projection onto {x >= 0, sum(x) = rho_k}.

    The water level is re-solved over the surviving positive entries until
    no entry would become negative.

    Args:
        rho_prime (ndarray): (d_k,) unconstrained point.
        rho_k (float): Positive simplex total.

    Returns:
        ndarray: (d_k,) projection.
    """
    values = np.asarray(rho_prime, dtype=float)
    support = np.ones(values.shape, dtype=bool)
    while True:
        level = (values[support].sum() - rho_k) / support.sum()
        shifted = values - level
        clipped = support & (shifted <= 0)
        if not clipped.any():
            break
        support &= ~clipped
    projected = np.where(support, shifted, 0.0)
    # Put the rounding residue on the largest entry so the sum is exact
    top = int(np.argmax(projected))
    projected[top] += rho_k - projected.sum()
    return projected

def project_rates(rho_prime, rates, layout):
    """Project every user's block of a (d,) vector onto its simplex."""
    return np.concatenate([project_per_user(piece, rho_k)
                           for piece, rho_k in zip(layout.split(rho_prime), rates)])

def apply_dummy_filters(state, active_mask):
    """
    Give every inactive stream a dummy receiver computed with virtual unit power.

    Inactive streams keep zero actual power and cause no interference, so
    active-stream quantities are untouched.

    Returns:
        MacState
    """
    mask = np.asarray(active_mask, dtype=bool)
    if mask.all() and state.active.all():
        return state
    xi = np.where(mask, state.xi, 0.0)
    g = state.g_tilde.copy()
    if (~mask).any():
        dummies = update_receivers(state.moments, xi, mask, normalize=True)
        g[~mask] = dummies[~mask]
    return replace(state, xi=xi, g_tilde=g, active=mask, xi_virtual=np.where(mask, xi, 1.0),
                   achieved_mmse=mac_mmse(g, state.moments, xi))

class PowerMinimizationLogic:
    """
    Class for the outer projected-gradient power minimization.

    This class drives the inner solver over the per-stream rate splits,
    keeps the convergence trace and optionally checkpoints every accepted
    iteration so an interrupted run can be resumed.
    """

    def __init__(self, scenario, csi, sample_set, init="equal", checkpoint_path=None):
        """
        Initialize PowerMinimizationLogic.

        Args:
            scenario (ScenarioConfig): Rates, streams, step, gamma and caps.
            csi (PartialCsi): Channel statistics.
            sample_set (ChannelSampleSet): Training samples of the run.
            init (str): "equal" or "random" initial split.
            checkpoint_path (str, optional): npz file rewritten after every accepted iteration.
        """
        self.scenario = scenario
        self.layout = stream_layout(scenario.streams)
        self.rates = np.asarray(scenario.rates, dtype=float)
        self.inner = InnerSolverLogic(scenario, csi, sample_set, self.layout)
        self.init = init
        self.checkpoint_path = checkpoint_path
        self.final_state = None
        self.final_rho = None
        self.report = None

    def initial_allocation(self):
        if self.init == "random":
            return RateAllocation.random(self.rates, self.layout, self.scenario.seed)
        return RateAllocation.equal(self.rates, self.layout)

    def gradient(self, state, rho):
        """Gradient bundle at a converged state, dummies applied."""
        state = apply_dummy_filters(state, rho > 0)
        return power_gradient(compute_jacobian(state), rho)

    def _inner(self, rho, warm_start):
        try:
            return self.inner.solve_inner(rho, warm_start=warm_start)
        except InnerConvergenceError as e:
            logger.warning(f"{e}; using the best state found")
            return e.state

    def _line_search(self, rho, state, grad):
        """
        Try s0, s0/2, ... until the projected step lowers the power.

        Returns:
            tuple or str or None: (rho, state, step, halvings) when a step is
            accepted, STATUS_CONVERGED when the projected step does not move,
            None when the halving cap is reached.
        """
        step = self.scenario.step
        halvings = 0
        while True:
            trial = project_rates(rho - step * grad, self.rates, self.layout)
            if np.max(np.abs(trial - rho)) < MOVE_TOL:
                return STATUS_CONVERGED if halvings == 0 else None
            try:
                candidate = self._inner(trial, state)
                if candidate.total_power < state.total_power:
                    return trial, candidate, step, halvings
            except InfeasibleTargetsError as e:
                logger.debug(f"Trial step {step:.6g} infeasible: {e}")
            halvings += 1
            if halvings >= self.scenario.max_step_halvings:
                return None
            step /= 2.0

    def _start(self, trace):
        """Initial split and inner solve; raises InfeasibleTargetsError with a report."""
        rho = self.initial_allocation().rho_streams
        state = self._inner(rho, None)
        report = feasibility_report(state.moments, state.xi, rho)
        if not report.feasible:
            raise InfeasibleTargetsError("initial targets violate the feasibility bound", report=report)
        trace.append(0, state, rho, 0.0, 0)
        self._checkpoint(rho, state, trace)
        logger.info(f"Initial split {np.round(rho, 4).tolist()}: power {power_to_db(state.total_power):.4f} dB")
        return rho, state, 1

    def _resume(self, trace):
        data = load_checkpoint(self.checkpoint_path)
        rho = data["rho"]
        state = self.inner.make_state(
            xi=data["xi"], tau=data["tau"], g_tilde=data["g_tilde"],
            moments=self._moments(data["tau"]), active=data["active"],
            iterations=int(data["inner_iterations"]), converged=True)
        for i in range(len(data["row_iteration"])):
            trace.rows.append(TraceRow(
                iteration=int(data["row_iteration"][i]),
                total_power=float(data["row_power"][i]),
                rho=tuple(float(x) for x in data["row_rho"][i]),
                xi=tuple(float(x) for x in data["row_xi"][i]),
                step=float(data["row_step"][i]),
                active=tuple(bool(x) for x in data["row_active"][i]),
                halvings=int(data["row_halvings"][i])))
        logger.info(f"Resumed from {self.checkpoint_path} at iteration {trace.rows[-1].iteration}")
        return rho, state, trace.rows[-1].iteration + 1

    def _moments(self, tau):
        return moments_from_whitened(self.inner.whitened, tau, self.layout)

    def _checkpoint(self, rho, state, trace):
        if self.checkpoint_path:
            save_checkpoint(self.checkpoint_path, rho, state, trace)

    def minimize_power(self, resume=False):
        """
        Run the projected-gradient power minimization.

        Args:
            resume (bool): Continue from checkpoint_path when it exists.

        Returns:
            tuple: (BcSolution, OuterTrace); trace.status is "converged" or "stalled".

        Raises:
            InfeasibleTargetsError: If the initial targets cannot be met.
        """
        trace = OuterTrace(layout=self.layout)
        if resume and self.checkpoint_path and os.path.exists(self.checkpoint_path):
            rho, state, first = self._resume(trace)
        else:
            rho, state, first = self._start(trace)

        status = STATUS_STALLED
        for iteration in range(first, self.scenario.max_outer_iters + 1):
            bundle = self.gradient(state, rho)
            outcome = self._line_search(rho, state, bundle.grad)
            if outcome == STATUS_CONVERGED:
                logger.info(f"Iteration {iteration}: projected gradient step vanishes, stationary split")
                status = STATUS_CONVERGED
                break
            if outcome is None:
                logger.warning(f"Iteration {iteration}: no decrease after "
                               f"{self.scenario.max_step_halvings} step halvings")
                break

            rho_new, state_new, step, halvings = outcome
            decrease = state.total_power - state_new.total_power
            rho, state = rho_new, state_new
            trace.append(iteration, state, rho, step, halvings)
            self._checkpoint(rho, state, trace)
            logger.info(f"Iteration {iteration}: power {power_to_db(state.total_power):.6f} dB "
                        f"(step {step:.4g}, {halvings} halvings, "
                        f"{int(np.sum(~state.active))} inactive streams)")
            if decrease <= self.scenario.gamma:
                status = STATUS_CONVERGED
                break
        else:
            logger.warning(f"Reached {self.scenario.max_outer_iters} outer iterations")

        trace.status = status
        self.final_state = state
        self.final_rho = rho
        self.report = feasibility_report(state.moments, state.xi, rho)
        solution = mac_to_bc(state, self.inner.whitened, rho)
        logger.info(f"Outer loop {status}: {len(trace.rows)} accepted rows, "
                    f"power {power_to_db(solution.total_power):.6f} dB")
        return solution, trace
