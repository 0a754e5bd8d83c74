"""
MSE Logic

MSE and rate algebra of the broadcast channel and of its dual MAC: BC MSEs
and MMSE receivers, average MMSE matrices and their eigenstructure, spatial
decorrelation, average rates and their lower bounds, the scalarized
dual-MAC MMSE and the feasibility matrix.

BC precoders are passed as a list of K complex (N, d_k) matrices. Channel
samples are whitened (see channel_logic.whiten_samples) before any Sigma
or rate computation, so the noise covariance there is the identity.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from app.logger import logger
from utils.errors import ContractViolationError, DimensionError, NumericalError
from utils.utils import herm, phase_normalize_columns

# Tolerance of the rate identity cross-check (bits, relative to max(1, rate))
RATE_IDENTITY_TOL = 1e-8

@dataclass(frozen=True, eq=False)
class SigmaStats:
    """
    Average MMSE matrices of every user and their eigen-decomposition.

    Attributes:
        sigma: list of (d_k, d_k) Hermitian matrices E[Sigma_k | v]
        eigenvalues: list of (d_k,) arrays sorted descending
        eigenvectors: list of (d_k, d_k) unitary matrices, columns phase-normalized
    """
    sigma: list
    eigenvalues: list
    eigenvectors: list

    def user_mmse(self):
        """Per-user average MMSE, trace of Sigma_bar_k."""
        return np.array([float(np.trace(s).real) for s in self.sigma])

    def stream_mmse(self):
        """Per-stream average MMSE (diagonal of every Sigma_bar_k), flattened."""
        return np.concatenate([np.diag(s).real for s in self.sigma])

@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    """
    Feasibility test of MMSE targets for given user-side filters.

    Attributes:
        e_matrix: (d, d) Hermitian matrix I - E[U]^H (E[U U^H] + s2 I)^{-1} E[U]
        bound_rhs: d minus the trace term at s2 = 0, lower bound of the sum MMSE
        lhs: sum of the MMSE targets 2^{-rho}
        feasible: verdict of check_feasibility
    """
    e_matrix: np.ndarray
    bound_rhs: float
    lhs: float
    feasible: bool

    def to_dict(self):
        return {
            "bound_rhs": float(self.bound_rhs),
            "lhs": float(self.lhs),
            "feasible": bool(self.feasible),
            "e_matrix_diagonal": [float(x) for x in np.diag(self.e_matrix).real],
        }

def _check_columns(precoders, receivers):
    for k, (p, f) in enumerate(zip(precoders, receivers)):
        if p.shape[-1] != f.shape[-1]:
            raise DimensionError(f"User {k + 1}: precoder has {p.shape[-1]} columns, receiver {f.shape[-1]}")

def bc_mse(precoders, receivers, channels, c_eta):
    """
    Per-user BC MSE E||s_k - F_k^H (H_k^H sum_l P_l s_l + eta_k)||^2 for one realization.

    Args:
        precoders (list[ndarray]): K precoders (N, d_k).
        receivers (list[ndarray]): K receivers (R, d_k).
        channels (ndarray): (K, N, R) channel matrices.
        c_eta (ndarray): (K, R, R) noise covariances.

    Returns:
        ndarray: (K,) real MSEs.

    Raises:
        DimensionError: If shapes are inconsistent.
    """
    _check_columns(precoders, receivers)
    stacked = np.concatenate(precoders, axis=1)
    if stacked.shape[0] != channels.shape[1] or channels.shape[0] != len(precoders):
        raise DimensionError(f"Precoders {stacked.shape} do not match channels {channels.shape}")

    mses = np.empty(len(precoders))
    for k, (p_k, f_k) in enumerate(zip(precoders, receivers)):
        if f_k.shape[0] != channels.shape[2]:
            raise DimensionError(f"User {k + 1}: receiver has {f_k.shape[0]} rows, expected {channels.shape[2]}")
        gain = f_k.conj().T @ channels[k].conj().T @ p_k
        received = channels[k].conj().T @ stacked
        covariance = received @ received.conj().T + c_eta[k]
        value = (p_k.shape[1] - 2.0 * np.trace(gain).real
                 + np.trace(f_k.conj().T @ covariance @ f_k).real)
        mses[k] = value
    return mses

def bc_mmse_receiver(precoders, user, channel, c_eta):
    """
    MMSE receiver F_k = (H^H P P^H H + C_eta)^{-1} H^H P_k.

    Args:
        precoders (list[ndarray]): K precoders (N, d_k).
        user (int): Receiving user k.
        channel (ndarray): (N, R) channel of user k, or a batch (M, N, R).
        c_eta (ndarray): (R, R) noise covariance of user k.

    Returns:
        ndarray: (R, d_k) receiver, or (M, R, d_k) for a batch.

    Raises:
        NumericalError: If the received covariance is singular.
    """
    stacked = np.concatenate(precoders, axis=1)
    channel_h = np.conj(np.swapaxes(channel, -1, -2))
    received = channel_h @ stacked
    covariance = received @ np.conj(np.swapaxes(received, -1, -2)) + c_eta
    try:
        return np.linalg.solve(covariance, channel_h @ precoders[user])
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"Received covariance of user {user + 1} is singular: {e}") from e

def _received_gains(precoders, whitened):
    """W_k^H P for every user and sample: list of K arrays (M, R, d)."""
    stacked = np.concatenate(precoders, axis=1)
    return [np.einsum('mnr,nd->mrd', whitened[k].conj(), stacked) for k in range(len(precoders))]

def _user_split(precoders):
    offsets = np.concatenate(([0], np.cumsum([p.shape[1] for p in precoders])))
    return [slice(int(offsets[k]), int(offsets[k + 1])) for k in range(len(precoders))]

def _information_matrices(precoders, whitened):
    """
    Per-user I + Y_k^H X_k^{-1} Y_k for every sample.

    X_k = I + Y_{-k} Y_{-k}^H is the whitened interference-plus-noise covariance.

    Returns:
        tuple: (list of (M, d_k, d_k) information matrices, list of X_k (M, R, R),
                list of Y_k (M, R, d_k))
    """
    blocks = _received_gains(precoders, whitened)
    slices = _user_split(precoders)
    rx = whitened.shape[3]
    information, interference, signals = [], [], []
    for k, sl in enumerate(slices):
        full = blocks[k]
        y_k = full[:, :, sl]
        others = np.delete(full, np.arange(sl.start, sl.stop), axis=2)
        x_k = np.eye(rx) + others @ np.conj(np.swapaxes(others, -1, -2))
        solved = np.linalg.solve(x_k, y_k)
        info = np.eye(y_k.shape[2]) + np.conj(np.swapaxes(y_k, -1, -2)) @ solved
        information.append(herm(info))
        interference.append(x_k)
        signals.append(y_k)
    return information, interference, signals

def sigma_stats(precoders, whitened):
    """
    Average MMSE matrices Sigma_bar_k = mean_m (I + Y_k^H X_k^{-1} Y_k)^{-1}.

    Args:
        precoders (list[ndarray]): K precoders (N, d_k).
        whitened (ndarray): (K, M, N, R) whitened channel samples.

    Returns:
        SigmaStats: Matrices with descending eigenvalues and phase-normalized eigenvectors.
    """
    information, _, _ = _information_matrices(precoders, whitened)
    sigmas, values, vectors = [], [], []
    for info in information:
        sigma = herm(np.linalg.inv(info).mean(axis=0))
        eigenvalues, eigenvectors = linalg.eigh(sigma)
        order = np.argsort(eigenvalues)[::-1]
        sigmas.append(sigma)
        values.append(eigenvalues[order])
        vectors.append(phase_normalize_columns(eigenvectors[:, order]))
    return SigmaStats(sigma=sigmas, eigenvalues=values, eigenvectors=vectors)

def decorrelate(precoders, stats):
    """
    Spatial decorrelation P'_k = P_k U_k.

    Returns:
        list[ndarray]: Rotated precoders with the same power and rates.
    """
    return [p @ u for p, u in zip(precoders, stats.eigenvectors)]

def rate_forms(precoders, whitened):
    """
    Per-sample rates in both equivalent forms.

    Form one is log2 det(X_k + Y_k Y_k^H) - log2 det(X_k); form two is
    -log2 det Sigma_k = log2 det(I + Y_k^H X_k^{-1} Y_k).

    Returns:
        tuple: Two (K, M) arrays of bits.
    """
    information, interference, signals = _information_matrices(precoders, whitened)
    determinant_form, sigma_form = [], []
    for info, x_k, y_k in zip(information, interference, signals):
        _, logdet_total = np.linalg.slogdet(x_k + y_k @ np.conj(np.swapaxes(y_k, -1, -2)))
        _, logdet_interference = np.linalg.slogdet(x_k)
        _, logdet_info = np.linalg.slogdet(info)
        determinant_form.append((logdet_total - logdet_interference) / np.log(2.0))
        sigma_form.append(logdet_info / np.log(2.0))
    return np.array(determinant_form), np.array(sigma_form)

def average_rate(precoders, whitened):
    """
    Sample-average rate of every user, cross-checked against the MMSE-matrix form.

    Args:
        precoders (list[ndarray]): K precoders (N, d_k).
        whitened (ndarray): (K, M, N, R) whitened channel samples.

    Returns:
        ndarray: (K,) bits per channel use.

    Raises:
        NumericalError: If the two rate forms disagree on any sample.
    """
    determinant_form, sigma_form = rate_forms(precoders, whitened)
    mismatch = np.abs(determinant_form - sigma_form) / np.maximum(1.0, np.abs(determinant_form))
    if mismatch.size and mismatch.max() > RATE_IDENTITY_TOL:
        raise NumericalError(f"Rate identity violated (max relative mismatch {mismatch.max():.3e})")
    return determinant_form.mean(axis=1)

def jensen_bound(stats):
    """
    Rate lower bound -sum_i log2 lambda_{k,i} of every user.

    A zero eigenvalue yields an infinite bound, logged as a warning.

    Returns:
        ndarray: (K,) bits.
    """
    bounds = np.empty(len(stats.eigenvalues))
    for k, eigenvalues in enumerate(stats.eigenvalues):
        if np.any(eigenvalues <= 0):
            logger.warning(f"User {k + 1}: zero MMSE eigenvalue, Jensen bound is infinite")
            bounds[k] = np.inf
        else:
            bounds[k] = -np.sum(np.log2(eigenvalues))
    return bounds

def mmse_rate_bound(stats):
    """Per-user bound -d_k log2(MMSE_k / d_k), never above jensen_bound."""
    bounds = np.empty(len(stats.sigma))
    for k, mmse in enumerate(stats.user_mmse()):
        d_k = stats.sigma[k].shape[0]
        bounds[k] = np.inf if mmse <= 0 else -d_k * np.log2(mmse / d_k)
    return bounds

def mac_mmse(g_tilde, moments, xi):
    """
    Average MMSE of every dual-MAC stream: 1 - xi_a |g_a^H mu_a|^2 / y_a.

    y_a = sum_b xi_b g_a^H Theta_b g_a + ||g_a||^2.

    Args:
        g_tilde (ndarray): (d, N) receivers, nonzero.
        moments (Moments): mu and theta.
        xi (ndarray): (d,) nonnegative powers.

    Returns:
        ndarray: (d,) MMSEs in (0, 1].

    Raises:
        ContractViolationError: If a receiver is zero.
    """
    norms = np.einsum('an,an->a', g_tilde.conj(), g_tilde).real
    if np.any(norms <= 0):
        raise ContractViolationError("Dual-MAC receivers must be nonzero")
    y = moments.cross_gains(g_tilde) @ xi + norms
    return 1.0 - xi * moments.useful_gains(g_tilde) / y

def build_upsilon(moments, xi):
    """
    First and second moments of the stacked effective channel U = [W_k tau_a sqrt(xi_a)]_a.

    Returns:
        tuple: E[U] (N, d) and E[U U^H] (N, N).
    """
    scale = np.sqrt(np.asarray(xi, dtype=float))
    mean = moments.mu.T * scale
    gram = np.einsum('a,anp->np', scale ** 2, moments.theta)
    return mean, herm(gram)

def feasibility_matrix(mean, gram, sigma2):
    """
    E = I_d - E[U]^H (E[U U^H] + sigma2 I)^{-1} E[U].

    At sigma2 = 0 a Hermitian pseudo-inverse replaces the inverse.

    Returns:
        ndarray: (d, d) Hermitian matrix.
    """
    streams = mean.shape[1]
    if sigma2 > 0:
        solved = linalg.solve(gram + sigma2 * np.eye(gram.shape[0]), mean, assume_a='pos')
    else:
        solved = linalg.pinvh(gram) @ mean
    return herm(np.eye(streams) - mean.conj().T @ solved)

def check_feasibility(rho_streams, report):
    """
    Verdict for MMSE targets 2^{-rho}: feasible iff sum 2^{-rho} >= bound_rhs.

    The verdict only depends on the target sum, so splits with equal sum agree.

    Args:
        rho_streams (ndarray): (d,) nonnegative rate targets.
        report (FeasibilityReport): Report holding bound_rhs.

    Returns:
        bool
    """
    lhs = float(np.sum(np.exp2(-np.asarray(rho_streams, dtype=float))))
    return lhs >= report.bound_rhs

def feasibility_report(moments, xi, rho_streams):
    """
    Full feasibility report for the filters behind moments and powers xi.

    Returns:
        FeasibilityReport
    """
    mean, gram = build_upsilon(moments, xi)
    e_matrix = feasibility_matrix(mean, gram, 0.0)
    bound_rhs = float(np.clip(np.trace(e_matrix).real, 0.0, mean.shape[1]))
    lhs = float(np.sum(np.exp2(-np.asarray(rho_streams, dtype=float))))
    report = FeasibilityReport(e_matrix=e_matrix, bound_rhs=bound_rhs, lhs=lhs, feasible=lhs >= bound_rhs)
    logger.debug(f"Feasibility: lhs={lhs:.6g}, bound={bound_rhs:.6g}, feasible={report.feasible}")
    return report

def bc_stream_mse(precoders, receivers, whitened, layout):
    """
    Per-stream average BC MSE with explicit per-sample receivers.

    Args:
        precoders (ndarray): (N, d) stacked BC precoders.
        receivers (ndarray): (d, M, R) whitened-domain receivers f_a^(m).
        whitened (ndarray): (K, M, N, R) whitened channel samples.
        layout (StreamLayout): Stream layout.

    Returns:
        ndarray: (d,) average MSEs.
    """
    gains = np.einsum('kmnr,nd->kmrd', whitened.conj(), precoders)
    mse = np.empty(layout.total)
    for a in range(layout.total):
        k = layout.user_of_stream[a]
        # e[m, b] = f_a^(m)H W_k^(m)H p_b
        e = np.einsum('mr,mrd->md', receivers[a].conj(), gains[k])
        noise = np.einsum('mr,mr->m', receivers[a].conj(), receivers[a]).real
        per_sample = np.sum(np.abs(e) ** 2, axis=1) - 2.0 * e[:, a].real + 1.0 + noise
        mse[a] = per_sample.mean()
    return mse
