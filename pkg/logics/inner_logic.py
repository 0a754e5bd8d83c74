"""
Inner Solver Logic

Minimum-power solution for fixed per-stream MMSE targets in the dual MAC,
found by alternating three steps (user-side per-sample precoders that make
the Lagrangian of the problem stationary, base-station receivers,
linear-system power allocation), and its conversion to downlink precoders
through MSE duality. Targets the starting filters cannot meet are reached
by continuation.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from app.logger import logger
from logics.channel_logic import moments_from_whitened, stream_layout, whiten_samples
from logics.mse_logic import (average_rate, bc_stream_mse, feasibility_report, mac_mmse,
                              sigma_stats)
from utils.errors import (ContractViolationError, DualityError, InfeasibleTargetsError,
                          InnerConvergenceError, NumericalError)

# Allowed total power increase of one alternating cycle before it is rejected
MONOTONE_SLACK = 1e-9

# A rejected precoder move is halved at most this many times
MAX_DAMPING = 10

# Continuation towards targets the starting filters cannot meet
MAX_STAGES = 100
STAGE_CYCLES = 25
REACH_BISECTIONS = 40
MIN_ADVANCE = 1e-6

# Newton steps for the unit-norm shift of the per-sample quadratic
SHIFT_ITERATIONS = 60

# Norm left to fill when the smallest-eigenvalue coefficient vanishes
HARD_CASE_DEFICIT = 1e-10

@dataclass(frozen=True, eq=False)
class MacState:
    """
    Dual-MAC solution for one vector of per-stream targets.

    Attributes:
        layout: StreamLayout of the scenario
        xi: (d,) per-stream MAC powers, zero for inactive streams
        tau: (d, M, R) unit-norm per-sample user-side precoders
        g_tilde: (d, N) unit-norm base-station receivers
        moments: Moments of the effective channels under tau
        achieved_mmse: (d,) average MMSE of every stream
        active: (d,) bool mask of streams with a positive target
        xi_virtual: (d,) xi for active streams, 1 for inactive (dummy) ones
        iterations: alternating cycles performed
        converged: True once the power change fell below the tolerance
    """
    layout: object
    xi: np.ndarray
    tau: np.ndarray
    g_tilde: np.ndarray
    moments: object
    achieved_mmse: np.ndarray
    active: np.ndarray
    xi_virtual: np.ndarray
    iterations: int = 0
    converged: bool = False

    @property
    def total_power(self):
        return float(np.sum(self.xi))

    def equalizers(self):
        """Scalar MAC equalizers r_a = sqrt(xi_a) conj(g_a^H mu_a) / y_a (reporting only)."""
        norms = np.einsum('an,an->a', self.g_tilde.conj(), self.g_tilde).real
        y = self.moments.cross_gains(self.g_tilde) @ self.xi + norms
        inner = np.einsum('an,an->a', self.g_tilde.conj(), self.moments.mu)
        return np.sqrt(self.xi) * np.conj(inner) / y

@dataclass(frozen=True, eq=False)
class BcSolution:
    """
    Downlink solution obtained from a MacState.

    Attributes:
        precoders: list of K (N, d_k) precoders
        stream_mse: (d,) average BC MSE with the duality receivers (equals the MAC MMSE)
        stream_mmse: (d,) average BC MSE with per-sample MMSE receivers (never larger)
        total_power: sum of squared precoder norms
        mac_power: total power of the MAC state it came from
        rates: (K,) average rates on the training samples
        rho_streams: (d,) per-stream rate targets
        beta2: (d,) per-stream downlink powers
    """
    precoders: list
    stream_mse: np.ndarray
    stream_mmse: np.ndarray
    total_power: float
    mac_power: float
    rates: np.ndarray
    rho_streams: np.ndarray
    beta2: np.ndarray

    @property
    def power_residual(self):
        """Relative difference between BC and MAC total power."""
        return abs(self.total_power - self.mac_power) / max(self.mac_power, 1e-300)

def _normalize_rows(vectors):
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return vectors / np.where(norms > 0, norms, 1.0)

def update_receivers(moments, xi, active=None, normalize=False):
    """
    Average-MMSE receivers g_a = (I + sum_b xi_b Theta_b)^{-1} mu_a.

    With an active mask, inactive streams cause no interference and each of
    them is computed with its own virtual unit power (dummy filter).

    Args:
        moments (Moments): mu and theta.
        xi (ndarray): (d,) nonnegative powers.
        active (ndarray, optional): (d,) bool mask; all streams count when omitted.
        normalize (bool): Scale every receiver to unit norm.

    Returns:
        ndarray: (d, N) receivers.
    """
    xi = np.asarray(xi, dtype=float)
    active = np.ones(xi.shape, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    weights = np.where(active, xi, 0.0)
    dim = moments.mu.shape[1]
    base = np.eye(dim) + np.einsum('b,bnp->np', weights, moments.theta)
    receivers = linalg.solve(base, moments.mu.T, assume_a='pos').T
    for a in np.flatnonzero(~active):
        receivers[a] = linalg.solve(base + moments.theta[a], moments.mu[a], assume_a='pos')
    return _normalize_rows(receivers) if normalize else receivers

def solve_power_allocation(g_tilde, moments, eps_targets):
    """
    Powers meeting every MMSE target with equality for fixed filters.

    Solves xi_a c_a = (1 - eps_a)(sum_b xi_b theta_ab + n_a) over the streams
    with eps_a < 1; streams with eps_a = 1 get zero power.

    Args:
        g_tilde (ndarray): (d, N) receivers.
        moments (Moments): mu and theta.
        eps_targets (ndarray): (d,) MMSE targets in (0, 1].

    Returns:
        ndarray: (d,) powers, positive on the active streams.

    Raises:
        ContractViolationError: If a target lies outside (0, 1].
        InfeasibleTargetsError: If the system is singular or its solution is not positive.
    """
    eps = np.asarray(eps_targets, dtype=float)
    if np.any(eps <= 0) or np.any(eps > 1):
        raise ContractViolationError("MMSE targets must lie in (0, 1]")
    active = eps < 1.0
    xi = np.zeros(eps.shape)
    if not active.any():
        return xi

    useful = moments.useful_gains(g_tilde)[active]
    cross = moments.cross_gains(g_tilde)[np.ix_(active, active)]
    noise = np.einsum('an,an->a', g_tilde.conj(), g_tilde).real[active]
    slack = 1.0 - eps[active]
    system = np.diag(useful) - slack[:, None] * cross
    try:
        solution = linalg.solve(system, slack * noise)
    except (linalg.LinAlgError, ValueError) as e:
        raise InfeasibleTargetsError(f"targets infeasible for current filters ({e})") from e
    if not np.all(np.isfinite(solution)) or np.any(solution <= 0):
        raise InfeasibleTargetsError("targets infeasible for current filters")
    xi[active] = solution
    return xi

def dual_downlink_powers(g_tilde, moments, xi):
    """
    Downlink powers beta^2 giving every stream its MAC MMSE in the broadcast channel.

    Solves (diag(y) - diag(xi) Theta^T) beta^2 = xi for unit-norm receivers;
    the solution satisfies sum(beta^2) = sum(xi).

    Returns:
        ndarray: (d,) powers.

    Raises:
        NumericalError: If the system is singular.
    """
    g = _normalize_rows(g_tilde)
    xi = np.asarray(xi, dtype=float)
    cross = moments.cross_gains(g)
    y = cross @ xi + 1.0
    system = np.diag(y) - xi[:, None] * cross.T
    try:
        return linalg.solve(system, xi)
    except linalg.LinAlgError as e:
        raise NumericalError(f"Duality system is singular: {e}") from e

def update_precoders_per_sample(g_tilde, powers, whitened, layout, previous_tau=None):
    """
    Per-sample user-side precoders of the dual MAC.

    For each realization the precoder of stream a is the normalized MMSE
    receiver of the conjugate downlink in which every stream b transmits
    sqrt(powers_b) g_b: tau ∝ (I + W^H G Q G^H W)^{-1} W^H g_a.

    Args:
        g_tilde (ndarray): (d, N) receivers.
        powers (ndarray): (d,) virtual downlink powers Q.
        whitened (ndarray): (K, M, N, R) whitened channels.
        layout (StreamLayout): Stream layout.
        previous_tau (ndarray, optional): (d, M, R) fallback for vanishing directions.

    Returns:
        ndarray: (d, M, R) unit-norm precoders.
    """
    powers = np.asarray(powers, dtype=float)
    transmit = np.einsum('a,an,ap->np', powers, g_tilde, g_tilde.conj())
    count, rx = whitened.shape[1], whitened.shape[3]
    tau = np.empty((layout.total, count, rx), dtype=complex)
    for k in range(layout.users):
        channel = whitened[k]
        channel_h = np.conj(np.swapaxes(channel, -1, -2))
        covariance = np.eye(rx) + channel_h @ (transmit @ channel)
        rhs = np.einsum('mnr,an->mra', channel.conj(), g_tilde[layout.user_slice(k)])
        tau[layout.user_slice(k)] = np.moveaxis(np.linalg.solve(covariance, rhs), -1, 0)

    norms = np.linalg.norm(tau, axis=-1)
    vanished = norms <= 1e-300
    if vanished.any():
        logger.warning(f"{int(vanished.sum())} per-sample precoders vanished, keeping previous directions")
        if previous_tau is not None:
            tau[vanished] = previous_tau[vanished]
        else:
            tau[vanished] = 0.0
            tau[vanished, 0] = 1.0
        norms = np.linalg.norm(tau, axis=-1)
    return tau / norms[..., None]

def initial_precoders(whitened, layout):
    """
    Starting per-sample precoders: matched filters of the dominant eigenvectors
    of the average channel covariance of every user.

    Returns:
        tuple: (tau (d, M, R), g (d, N)) with g the eigenvectors used.
    """
    dim = whitened.shape[2]
    g_init = np.empty((layout.total, dim), dtype=complex)
    for k in range(layout.users):
        covariance = np.einsum('mnr,mpr->np', whitened[k], whitened[k].conj()) / whitened.shape[1]
        _, eigenvectors = linalg.eigh(0.5 * (covariance + covariance.conj().T))
        g_init[layout.user_slice(k)] = eigenvectors[:, ::-1][:, :layout.streams[k]].T
    return update_precoders_per_sample(g_init, np.zeros(layout.total), whitened, layout), g_init

def _unit_norm_minimizer(eigenvalues, coefficients):
    """
    Minimize x^H diag(a) x - 2 Re(c^H x) over ||x|| = 1, batched over leading axes.

    The minimizer is x_i = c_i / (a_i + nu) with nu > -min(a) solving
    sum_i |c_i|^2 / (a_i + nu)^2 = 1. The shift is found by Newton steps on
    1/||x(nu)|| - 1 inside a bracket, bisecting whenever a step leaves it.
    When the coefficient of the smallest eigenvalue vanishes and ||x|| stays
    below one, the missing norm goes to that eigenvector.

    Args:
        eigenvalues (ndarray): (..., R) ascending, nonnegative.
        coefficients (ndarray): (..., R) complex right-hand side in the eigenbasis.

    Returns:
        ndarray: (..., R) coordinates of the minimizer.
    """
    a = np.broadcast_to(eigenvalues, coefficients.shape)
    weight = np.abs(coefficients) ** 2
    lower = -a[..., 0]
    upper = lower + np.sqrt(weight.sum(axis=-1))
    shift = upper.copy()
    for _ in range(SHIFT_ITERATIONS):
        gap = a + shift[..., None]
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            squared = np.sum(weight / gap ** 2, axis=-1)
            cubed = np.sum(weight / gap ** 3, axis=-1)
            residual = 1.0 / np.sqrt(squared) - 1.0
            newton = shift - residual * squared ** 1.5 / cubed
        upper = np.where(residual >= 0, shift, upper)
        lower = np.where(residual < 0, shift, lower)
        inside = np.isfinite(newton) & (newton > lower) & (newton <= upper)
        updated = np.where(inside, newton, 0.5 * (lower + upper))
        settled = np.all(np.abs(updated - shift) <= 1e-15 * np.maximum(1.0, np.abs(shift)))
        shift = updated
        if settled:
            break

    gap = a + shift[..., None]
    x = np.zeros(coefficients.shape, dtype=complex)
    np.divide(coefficients, gap, out=x, where=gap > 0)
    deficit = 1.0 - np.sum(np.abs(x) ** 2, axis=-1)
    x[..., 0] += np.where(deficit > HARD_CASE_DEFICIT, np.sqrt(np.clip(deficit, 0.0, None)), 0.0)
    return x

def stationary_precoders(g_tilde, xi, beta2, moments, whitened, layout, active, previous_tau=None):
    """
    Per-sample precoders at which the Lagrangian of the inner problem is stationary.

    With receivers, powers and multipliers fixed, the Lagrangian splits into
    one quadratic per sample and active stream a on the unit sphere:

        min  tau^H B tau - 2 Re(c_a^H tau),   ||tau|| = 1,
        B   = W^H (sum_b beta2_b g_b g_b^H) W
        c_a = beta2_a y_a / (xi_a conj(g_a^H mu_a)) W^H g_a

    where beta2 are the duality powers, which equal the multipliers scaled
    by the squared MAC equalizers. The minimizer is (B + nu I)^{-1} c_a with
    the shift nu chosen for unit norm. Inactive streams keep the
    conjugate-downlink MMSE direction of update_precoders_per_sample.

    Args:
        g_tilde (ndarray): (d, N) receivers.
        xi (ndarray): (d,) MAC powers.
        beta2 (ndarray): (d,) duality powers for the same filters.
        moments (Moments): Moments under the current precoders.
        whitened (ndarray): (K, M, N, R) whitened channels.
        layout (StreamLayout): Stream layout.
        active (ndarray): (d,) bool mask.
        previous_tau (ndarray, optional): (d, M, R) fallback for vanishing directions.

    Returns:
        ndarray: (d, M, R) unit-norm precoders.
    """
    g = _normalize_rows(g_tilde)
    xi = np.asarray(xi, dtype=float)
    active = np.asarray(active, dtype=bool)
    weights = np.where(active, np.clip(beta2, 0.0, None), 0.0)
    tau = update_precoders_per_sample(g, weights, whitened, layout, previous_tau)

    y = moments.cross_gains(g) @ np.where(active, xi, 0.0) + 1.0
    coherent = np.einsum('an,an->a', g.conj(), moments.mu)
    solvable = active & (xi > 0) & (np.abs(coherent) > 0)
    if not solvable.any():
        return tau
    scale = np.zeros(layout.total, dtype=complex)
    scale[solvable] = weights[solvable] * y[solvable] / (xi[solvable] * np.conj(coherent[solvable]))

    transmit = np.einsum('a,an,ap->np', weights, g, g.conj())
    for k in range(layout.users):
        streams = np.arange(layout.total)[layout.user_slice(k)]
        streams = streams[solvable[streams]]
        if streams.size == 0:
            continue
        channel = whitened[k]
        gram = np.einsum('mnr,np,mps->mrs', channel.conj(), transmit, channel)
        eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (gram + np.conj(np.swapaxes(gram, -1, -2))))
        eigenvalues = np.clip(eigenvalues, 0.0, None)
        rhs = scale[streams, None, None] * np.einsum('mnr,an->amr', channel.conj(), g[streams])
        coordinates = np.einsum('mrq,amr->amq', eigenvectors.conj(), rhs)
        solution = _unit_norm_minimizer(eigenvalues[None], coordinates)
        tau[streams] = np.einsum('mrq,amq->amr', eigenvectors, solution)
    return _normalize_rows(tau)

def _blend(tau, target, fraction):
    """Per-sample move of a fraction of the way from tau to target, renormalized."""
    mixed = (1.0 - fraction) * tau + fraction * target
    norms = np.linalg.norm(mixed, axis=-1, keepdims=True)
    return _normalize_rows(np.where(norms > 1e-12, mixed, target))

def mac_to_bc(state, whitened, rho_streams):
    """
    Convert a MAC solution to downlink precoders p_a = beta_a g_a.

    The users' receivers along tau_a^(m) with the optimal common scalar make
    every BC stream MSE equal its MAC MMSE at the same total power.

    Args:
        state (MacState): Converged MAC state.
        whitened (ndarray): (K, M, N, R) whitened training channels.
        rho_streams (ndarray): (d,) rate targets of the state.

    Returns:
        BcSolution

    Raises:
        DualityError: If an active stream gets a nonpositive downlink power.
    """
    layout = state.layout
    g = _normalize_rows(state.g_tilde)
    beta2 = dual_downlink_powers(g, state.moments, state.xi)
    floor = 1e-12 * max(1.0, state.total_power)
    if np.any(beta2[state.active] <= 0) or np.any(beta2 < -floor):
        raise DualityError(f"Nonpositive downlink powers: {beta2}")
    beta2 = np.clip(beta2, 0.0, None)
    beta = np.sqrt(beta2)

    stacked = g.T * beta
    precoders = [stacked[:, layout.user_slice(k)] for k in range(layout.users)]

    # Duality receivers phi_a tau_a^(m)
    z = state.moments.cross_gains(g).T @ beta2 + 1.0
    coherent = beta * np.einsum('an,an->a', state.moments.mu.conj(), g)
    receivers = (coherent / z)[:, None, None] * state.tau

    stream_mse = bc_stream_mse(stacked, receivers, whitened, layout)
    stats = sigma_stats(precoders, whitened)
    solution = BcSolution(
        precoders=precoders,
        stream_mse=stream_mse,
        stream_mmse=stats.stream_mmse(),
        total_power=float(np.sum(beta2)),
        mac_power=state.total_power,
        rates=average_rate(precoders, whitened),
        rho_streams=np.asarray(rho_streams, dtype=float).copy(),
        beta2=beta2,
    )
    logger.debug(f"MAC->BC: power {solution.mac_power:.10g} -> {solution.total_power:.10g}, "
                 f"max MSE gap {np.max(np.abs(stream_mse - state.achieved_mmse)):.3e}")
    return solution

class InnerSolverLogic:
    """
    Class running the dual-MAC inner power minimization.

    This class owns the whitened training samples of one run and solves the
    minimum-power problem for any vector of per-stream rate targets,
    optionally warm-started from a previous solution.
    """

    def __init__(self, scenario, csi, sample_set, layout=None):
        """
        Initialize InnerSolverLogic.

        Args:
            scenario (ScenarioConfig): Tolerance and iteration cap of the inner loop.
            csi (PartialCsi): Channel statistics (noise covariances).
            sample_set (ChannelSampleSet): Training samples, fixed for the run.
            layout (StreamLayout, optional): Defaults to the scenario's streams.
        """
        self.scenario = scenario
        self.csi = csi
        self.sample_set = sample_set
        self.layout = layout or stream_layout(scenario.streams)
        self.whitened = whiten_samples(sample_set, csi)
        self.tol = scenario.inner_tol
        self.max_iters = scenario.max_inner_iters

    def make_state(self, xi, tau, g_tilde, moments, active, iterations=0, converged=False):
        """Assemble a MacState, evaluating the achieved MMSEs."""
        return MacState(
            layout=self.layout,
            xi=xi,
            tau=tau,
            g_tilde=g_tilde,
            moments=moments,
            achieved_mmse=mac_mmse(g_tilde, moments, xi),
            active=active,
            xi_virtual=np.where(active, xi, 1.0),
            iterations=iterations,
            converged=converged,
        )

    def _cycle(self, state, eps, active):
        """
        One alternating cycle: stationary precoders, receivers, power allocation.

        A precoder move that raises the total power is pulled back towards the
        current precoders, halving the step up to MAX_DAMPING times.

        Returns:
            tuple or None: (xi, tau, g, moments) of the accepted cycle, None when
            no damped move keeps the power from rising.
        """
        xi, tau, g, moments = state.xi, state.tau, state.g_tilde, state.moments
        beta2 = np.clip(dual_downlink_powers(g, moments, xi), 0.0, None)
        target = stationary_precoders(g, xi, beta2, moments, self.whitened, self.layout, active, tau)
        ceiling = state.total_power + MONOTONE_SLACK * max(1.0, state.total_power)

        fraction = 1.0
        for _ in range(MAX_DAMPING + 1):
            tau_new = target if fraction == 1.0 else _blend(tau, target, fraction)
            moments_new = moments_from_whitened(self.whitened, tau_new, self.layout)
            try:
                xi_mid = solve_power_allocation(g, moments_new, eps)
            except InfeasibleTargetsError:
                xi_mid = xi
            g_new = update_receivers(moments_new, xi_mid, active, normalize=True)
            try:
                xi_new = solve_power_allocation(g_new, moments_new, eps)
            except InfeasibleTargetsError:
                xi_new = None
            if xi_new is not None and float(np.sum(xi_new)) <= ceiling:
                return xi_new, tau_new, g_new, moments_new
            fraction *= 0.5
        return None

    def _refine(self, state, eps, active, cycles):
        """Run up to `cycles` accepted cycles at fixed targets."""
        for _ in range(cycles):
            outcome = self._cycle(state, eps, active)
            if outcome is None:
                break
            power_old = state.total_power
            state = self.make_state(*outcome, active, state.iterations)
            if power_old - state.total_power < self.tol:
                break
        return state

    def _reach(self, g, moments, start, rho, low):
        """Largest continuation parameter in [low, 1] the current filters admit."""
        def admits(t):
            try:
                solve_power_allocation(g, moments, np.exp2(-((1.0 - t) * start + t * rho)))
                return True
            except InfeasibleTargetsError:
                return False

        if admits(1.0):
            return 1.0
        high = 1.0
        for _ in range(REACH_BISECTIONS):
            mid = 0.5 * (low + high)
            if admits(mid):
                low = mid
            else:
                high = mid
        return low

    def _warm_up(self, rho, active, warm_start):
        """
        Filters and powers meeting the full targets.

        Targets move along (1 - t) * start + t * rho, where start is what the
        starting filters already achieve (zero on a cold start). Each stage
        goes halfway to the largest t the current filters admit and refines
        the filters there.

        Returns:
            MacState: Feasible state at the full targets.

        Raises:
            InfeasibleTargetsError: With a feasibility report when the continuation stalls.
        """
        if warm_start is not None:
            tau = warm_start.tau
            moments = moments_from_whitened(self.whitened, tau, self.layout)
            g = _normalize_rows(warm_start.g_tilde)
            reached = np.clip(-np.log2(np.clip(warm_start.achieved_mmse, 1e-300, 1.0)), 0.0, None)
            start = np.where(warm_start.xi > 0, reached, 0.0)
        else:
            tau, _ = initial_precoders(self.whitened, self.layout)
            moments = moments_from_whitened(self.whitened, tau, self.layout)
            g = update_receivers(moments, np.ones(self.layout.total), active, normalize=True)
            start = np.zeros(self.layout.total)

        t = 0.0
        xi = np.zeros(self.layout.total)
        for stage in range(MAX_STAGES):
            reach = self._reach(g, moments, start, rho, t)
            if reach >= 1.0:
                xi = solve_power_allocation(g, moments, np.exp2(-rho))
                logger.debug(f"Warm-up reached the targets after {stage} stage(s)")
                return self.make_state(xi, tau, g, moments, active)
            if reach - t < MIN_ADVANCE:
                break

            step = t + 0.5 * (reach - t)
            rho_stage = (1.0 - step) * start + step * rho
            try:
                xi = solve_power_allocation(g, moments, np.exp2(-rho_stage))
            except InfeasibleTargetsError:
                step = reach
                rho_stage = (1.0 - step) * start + step * rho
                xi = solve_power_allocation(g, moments, np.exp2(-rho_stage))
            t = step
            stage_active = rho_stage > 0
            state = self.make_state(xi, tau, g, moments, stage_active)
            state = self._refine(state, np.exp2(-rho_stage), stage_active, STAGE_CYCLES)
            xi, tau, g, moments = state.xi, state.tau, state.g_tilde, state.moments
            logger.debug(f"Warm-up stage {stage + 1}: t={t:.6f}, power {state.total_power:.10g}")

        report = feasibility_report(moments, np.where(active, xi, 0.0), rho)
        raise InfeasibleTargetsError(
            f"targets infeasible: continuation stalled at t={t:.6g} "
            f"(sum of targets {report.lhs:.6g}, bound {report.bound_rhs:.6g})",
            report=report)

    def solve_inner(self, rho_streams, warm_start=None):
        """
        Minimize the total MAC power for per-stream rate targets.

        Alternates stationary per-sample precoders, moments, receivers and
        power allocation until the total power changes by less than
        inner_tol. When no damped precoder move keeps the power from rising
        the current state is returned as converged.

        Args:
            rho_streams (ndarray): (d,) nonnegative targets; zero marks an inactive stream.
            warm_start (MacState, optional): Previous solution to start from.

        Returns:
            MacState: Converged state meeting MMSE = 2^{-rho} on the active streams.

        Raises:
            ContractViolationError: On negative targets.
            InfeasibleTargetsError: If no filters admitting the targets are found.
            InnerConvergenceError: When max_inner_iters is hit, carrying the best state.
        """
        rho = np.asarray(rho_streams, dtype=float)
        if rho.shape != (self.layout.total,) or np.any(rho < 0):
            raise ContractViolationError(f"Rate targets must be {self.layout.total} nonnegative values")
        eps = np.exp2(-rho)
        active = rho > 0

        if not active.any():
            tau = warm_start.tau if warm_start is not None else initial_precoders(self.whitened, self.layout)[0]
            moments = moments_from_whitened(self.whitened, tau, self.layout)
            xi = np.zeros(self.layout.total)
            g = update_receivers(moments, xi, active, normalize=True)
            return self.make_state(xi, tau, g, moments, active, 0, True)

        state = self._warm_up(rho, active, warm_start)

        for iteration in range(1, self.max_iters + 1):
            outcome = self._cycle(state, eps, active)
            if outcome is None:
                logger.debug(f"Inner cycle {iteration}: no move lowers the power, stopping")
                return replace(state, iterations=iteration, converged=True)

            power_old = state.total_power
            state = self.make_state(*outcome, active, iteration)
            logger.debug(f"Inner cycle {iteration}: total power {state.total_power:.12g}")
            if power_old - state.total_power < self.tol:
                return replace(state, converged=True)

        raise InnerConvergenceError(f"Inner solver did not converge in {self.max_iters} cycles "
                                    f"(power {state.total_power:.10g})", state=state)
