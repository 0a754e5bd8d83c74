"""Builders shared by the test modules."""

import numpy as np

from app.config import ScenarioConfig
from logics.channel_logic import PartialCsi, sample_channels, stream_layout
from logics.inner_logic import InnerSolverLogic

def random_complex(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)

def random_pd(rng, dim, floor=0.5):
    a = random_complex(rng, dim, dim)
    return a @ a.conj().T / dim + floor * np.eye(dim)

def make_csi(rng, users, tx, rx, error_variance=0.5, random_noise=False):
    """Random means, scaled-identity errors and (optionally) random PD noise covariances."""
    h_mean = random_complex(rng, users, tx, rx)
    c_err = np.stack([error_variance * np.eye(tx, dtype=complex) for _ in range(users)])
    if random_noise:
        c_eta = np.stack([random_pd(rng, rx) for _ in range(users)])
    else:
        c_eta = np.stack([np.eye(rx, dtype=complex) for _ in range(users)])
    return PartialCsi(h_mean=h_mean, c_err=c_err, c_eta=c_eta)

def scalar_csi(mean=1.0, error_variance=0.0, noise_variance=1.0):
    """K = N = R = 1 statistics."""
    return PartialCsi(h_mean=np.full((1, 1, 1), mean, dtype=complex),
                      c_err=np.full((1, 1, 1), error_variance, dtype=complex),
                      c_eta=np.full((1, 1, 1), noise_variance, dtype=complex))

def make_inner(csi, streams, samples, seed=7, **overrides):
    """InnerSolverLogic over freshly drawn samples with tight tolerances."""
    values = dict(users=csi.users, tx_antennas=csi.tx_antennas, rx_antennas=csi.rx_antennas,
                  streams=streams, rates=[1.0] * csi.users, samples=samples, seed=seed,
                  inner_tol=1e-12, max_inner_iters=5000,
                  error_variance=float(csi.c_err[0, 0, 0].real))
    values.update(overrides)
    scenario = ScenarioConfig(**values)
    sample_set = sample_channels(csi, samples, seed)
    return InnerSolverLogic(scenario, csi, sample_set, stream_layout(streams))
