"""
Channel Logic

Scenario construction, the stochastic CSI error model, Monte Carlo channel
sampling and the sample-average moments every other module consumes.

Array conventions (K users, N transmit antennas, R receive antennas,
M samples, d streams in total):
    channel mean          (K, N, R)
    channel samples       (K, M, N, R)
    per-sample precoders  (d, M, R)   one unit-norm R-vector per stream and sample
    moments mu / theta    (d, N) / (d, N, N)
"""

from dataclasses import dataclass

import numpy as np

from app.logger import logger
from utils.errors import ConfigurationError, ContractViolationError, DimensionError
from utils.utils import hermitian_inv_sqrt, hermitian_sqrt, is_hermitian_psd

# Unit-norm tolerance of the per-sample precoders
TAU_NORM_TOL = 1e-9

# Sub-streams of np.random.SeedSequence([seed, stream])
SCENARIO_STREAM = 0
TRAINING_STREAM = 1
VALIDATION_STREAM = 2
INIT_STREAM = 3

class StreamLayout:
    """
    Flattened stream indexing shared by all modules.

    Stream i of user k lives at a = sum(d_m for m < k) + i.
    """

    def __init__(self, streams):
        """
        Args:
            streams (iterable[int]): Streams per user d_k.
        """
        self.streams = tuple(int(d) for d in streams)
        self.users = len(self.streams)
        self.total = int(sum(self.streams))
        self.offsets = tuple(int(o) for o in np.concatenate(([0], np.cumsum(self.streams, dtype=int))))
        self.user_of_stream = np.repeat(np.arange(self.users), self.streams)

    def user_slice(self, k):
        return slice(self.offsets[k], self.offsets[k + 1])

    def index(self, k, i):
        return self.offsets[k] + i

    def split(self, vector):
        """Split a flattened d-vector into per-user pieces."""
        return [np.asarray(vector)[self.user_slice(k)] for k in range(self.users)]

    def labels(self):
        """Column labels (k,i), 1-based."""
        return [f"k{k + 1}_i{i + 1}" for k in range(self.users) for i in range(self.streams[k])]

    def __eq__(self, other):
        return isinstance(other, StreamLayout) and self.streams == other.streams

    def __hash__(self):
        return hash(self.streams)

    def __repr__(self):
        return f"StreamLayout({list(self.streams)})"

def stream_layout(streams):
    """
    Build the flattened stream layout of a scenario.

    Args:
        streams (iterable[int]): Streams per user.

    Returns:
        StreamLayout: Offsets, per-user slices and the user-of-stream map.
    """
    return StreamLayout(streams)

@dataclass(frozen=True, eq=False)
class PartialCsi:
    """
    Statistical channel knowledge of the transmitter.

    Attributes:
        h_mean: (K, N, R) channel means E[H_k | v]
        c_err: (K, N, N) column error covariances, Hermitian PSD
        c_eta: (K, R, R) noise covariances, Hermitian PD
        phases: (K,) phase ramps used to build the means, if any
    """
    h_mean: np.ndarray
    c_err: np.ndarray
    c_eta: np.ndarray
    phases: np.ndarray = None

    def __post_init__(self):
        users, tx, rx = self.h_mean.shape
        if self.c_err.shape != (users, tx, tx) or self.c_eta.shape != (users, rx, rx):
            raise DimensionError(f"CSI shapes disagree: mean {self.h_mean.shape}, "
                                 f"error {self.c_err.shape}, noise {self.c_eta.shape}")
        for k in range(users):
            if not is_hermitian_psd(self.c_err[k]):
                raise ConfigurationError(f"User {k + 1}: error covariance is not Hermitian PSD")
            if not is_hermitian_psd(self.c_eta[k]) or np.linalg.eigvalsh(self.c_eta[k])[0] <= 0:
                raise ConfigurationError(f"User {k + 1}: noise covariance is not Hermitian PD")

    @property
    def users(self):
        return self.h_mean.shape[0]

    @property
    def tx_antennas(self):
        return self.h_mean.shape[1]

    @property
    def rx_antennas(self):
        return self.h_mean.shape[2]

    def noise_whiteners(self):
        """Return C_eta_k^{-1/2} for every user, shape (K, R, R)."""
        return np.stack([hermitian_inv_sqrt(c) for c in self.c_eta])

@dataclass(frozen=True, eq=False)
class ChannelSampleSet:
    """
    Monte Carlo channel realizations, fixed for one optimization run.

    Attributes:
        samples: (K, M, N, R) complex channel matrices H_k^(m)
        seed: Seed the set was drawn from
        stream: Seed sub-stream (training or validation)
    """
    samples: np.ndarray
    seed: int
    stream: int = TRAINING_STREAM

    @property
    def count(self):
        return self.samples.shape[1]

    @property
    def users(self):
        return self.samples.shape[0]

@dataclass(frozen=True, eq=False)
class Moments:
    """
    Sample-average first and second moments of the effective dual-MAC channels.

    Attributes:
        mu: (d, N) mu_a = E[W_k tau_a]
        theta: (d, N, N) Theta_a = E[W_k tau_a tau_a^H W_k^H]
    """
    mu: np.ndarray
    theta: np.ndarray

    def cross_gains(self, g_tilde):
        """
        Quadratic forms theta_ab = g_a^H Theta_b g_a.

        Args:
            g_tilde (ndarray): (d, N) receivers.

        Returns:
            ndarray: Real (d, d) matrix, row a = receiver, column b = interfering stream.
        """
        return np.einsum('an,bnp,ap->ab', g_tilde.conj(), self.theta, g_tilde).real

    def useful_gains(self, g_tilde):
        """|g_a^H mu_a|^2 for every stream."""
        return np.abs(np.einsum('an,an->a', g_tilde.conj(), self.mu)) ** 2

def build_scenario(config, phases=None):
    """
    Instantiate the simulation CSI model of a scenario.

    Every mean column of user k is u_k with entries e^{j(n-1)phi_k}, phi_k
    uniform on [0, 2pi); the error covariance is error_variance·I_N and the
    noise covariance noise_variance·I_R.

    Args:
        config (ScenarioConfig): Validated scenario.
        phases (array-like, optional): Explicit phi_k, length K. Drawn from
            the scenario seed when omitted.

    Returns:
        PartialCsi: Deterministic given the seed.

    Raises:
        ConfigurationError: If explicit phases have the wrong length.
    """
    if phases is None:
        rng = np.random.default_rng([config.seed, SCENARIO_STREAM])
        phases = rng.uniform(0.0, 2.0 * np.pi, size=config.users)
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (config.users,):
        raise ConfigurationError(f"Expected {config.users} phases, got shape {phases.shape}")

    n = np.arange(config.tx_antennas)
    ramps = np.exp(1j * np.outer(phases, n))
    h_mean = np.repeat(ramps[:, :, None], config.rx_antennas, axis=2)
    c_err = np.broadcast_to(config.error_variance * np.eye(config.tx_antennas, dtype=complex),
                            (config.users, config.tx_antennas, config.tx_antennas)).copy()
    c_eta = np.broadcast_to(config.noise_variance * np.eye(config.rx_antennas, dtype=complex),
                            (config.users, config.rx_antennas, config.rx_antennas)).copy()

    logger.info(f"Scenario built: {config}, phases={np.round(phases, 4).tolist()}")
    return PartialCsi(h_mean=h_mean, c_err=c_err, c_eta=c_eta, phases=phases)

def sample_channels(csi, count, seed, stream=TRAINING_STREAM):
    """
    Draw M channel realizations per user: H = H_mean + C_err^{1/2} Z, Z i.i.d. CN(0, 1).

    Args:
        csi (PartialCsi): Channel statistics.
        count (int): Sample count M >= 1.
        seed (int): Run seed.
        stream (int): Seed sub-stream, keeps training and validation draws independent.

    Returns:
        ChannelSampleSet: Reproducible from (seed, stream).
    """
    if count < 1:
        raise ConfigurationError(f"Sample count must be >= 1, got {count}")
    rng = np.random.default_rng([int(seed), int(stream)])
    shape = (count, csi.tx_antennas, csi.rx_antennas)
    samples = np.empty((csi.users,) + shape, dtype=complex)
    for k in range(csi.users):
        z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        samples[k] = csi.h_mean[k] + hermitian_sqrt(csi.c_err[k]) @ z
    logger.debug(f"Sampled {count} channels per user (seed={seed}, stream={stream})")
    return ChannelSampleSet(samples=samples, seed=int(seed), stream=int(stream))

def whiten_channel(channel, c_eta):
    """
    Whiten a channel against its receiver noise: H·C_eta^{-1/2}.

    Args:
        channel (ndarray): (..., N, R) channel matrix or batch.
        c_eta (ndarray): (R, R) noise covariance, Hermitian PD.

    Returns:
        ndarray: Whitened channel, same shape.

    Raises:
        NumericalError: If c_eta is not positive definite.
    """
    return np.asarray(channel) @ hermitian_inv_sqrt(c_eta)

def whiten_samples(sample_set, csi):
    """Whitened copy of a sample set, shape (K, M, N, R)."""
    return np.stack([whiten_channel(sample_set.samples[k], csi.c_eta[k]) for k in range(sample_set.users)])

def check_tau(tau, layout, count, rx_antennas):
    """
    Validate shape and unit norm of per-sample precoders.

    Raises:
        DimensionError: On a shape mismatch.
        ContractViolationError: If any norm deviates from one by more than 1e-9.
    """
    expected = (layout.total, count, rx_antennas)
    if tau.shape != expected:
        raise DimensionError(f"tau has shape {tau.shape}, expected {expected}")
    deviation = np.max(np.abs(np.linalg.norm(tau, axis=-1) - 1.0), initial=0.0)
    if deviation > TAU_NORM_TOL:
        raise ContractViolationError(f"Per-sample precoders must have unit norm (max deviation {deviation:.3e})")

def moments_from_whitened(whitened, tau, layout):
    """
    Sample-average moments from already whitened channels.

    Args:
        whitened (ndarray): (K, M, N, R) whitened channels.
        tau (ndarray): (d, M, R) unit-norm precoders.
        layout (StreamLayout): Stream layout.

    Returns:
        Moments: mu (d, N) and theta (d, N, N).
    """
    check_tau(tau, layout, whitened.shape[1], whitened.shape[3])
    # h[a, m] = W_k(a)^(m) tau_a^(m)
    effective = np.einsum('amnr,amr->amn', whitened[layout.user_of_stream], tau)
    count = whitened.shape[1]
    mu = effective.sum(axis=1) / count
    theta = np.einsum('amn,amp->anp', effective, effective.conj()) / count
    return Moments(mu=mu, theta=theta)

def estimate_moments(sample_set, tau, csi, layout):
    """
    Estimate mu_a and Theta_a of every stream from a sample set.

    Args:
        sample_set (ChannelSampleSet): Channel realizations.
        tau (ndarray): (d, M, R) per-sample precoders, unit norm.
        csi (PartialCsi): Supplies the noise covariances.
        layout (StreamLayout): Stream layout.

    Returns:
        Moments: Sample averages over the whitened channels.

    Raises:
        ContractViolationError: If a precoder is not unit norm.
    """
    return moments_from_whitened(whiten_samples(sample_set, csi), tau, layout)
