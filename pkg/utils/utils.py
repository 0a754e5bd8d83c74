"""
Utility Functions

This module provides general helpers used throughout PowerMin: exiting with
a status code, power/dB conversion, float formatting for exact text
round-trips and a few Hermitian-matrix utilities shared by the logics.

Functions:
    exit_with_error: Log critical error and exit with a status code
    power_to_db: Convert a linear power to decibels
    herm: Hermitian part of a (batch of) square matrices
    is_hermitian_psd: Eigenvalue-based PSD test with a trace-relative floor
    hermitian_sqrt / hermitian_inv_sqrt: Matrix square roots via eigh
    phase_normalize_columns: Make the leading entry of each column real-positive
"""

import sys

import numpy as np
from scipy import linalg

from app.logger import logger
from utils.errors import NumericalError

# Exit codes of the command line front end
EXIT_CONVERGED = 0
EXIT_USAGE = 1
EXIT_STALLED = 2
EXIT_INFEASIBLE = 3

def exit_with_error(message, code=EXIT_USAGE):
    """
    Print error message to logs and terminate execution

    Args:
        message (str): Critical error message to log before exiting
        code (int): Process exit status
    """
    logger.critical(message)
    logger.critical(f'Exiting with status {code}...')
    sys.exit(code)

def power_to_db(power):
    """
    Convert a power quantity to dB (10·log10).

    Args:
        power (float): Linear power, >= 0

    Returns:
        float: Power in dB, -inf for zero power
    """
    if power <= 0:
        return float('-inf')
    return 10.0 * np.log10(power)

def herm(matrix):
    """Hermitian part (A + A^H)/2 over the last two axes."""
    return 0.5 * (matrix + np.conj(np.swapaxes(matrix, -1, -2)))

def is_hermitian_psd(matrix, rel_floor=1e-10):
    """
    Check that a square matrix is Hermitian positive semidefinite.

    The smallest eigenvalue may be negative down to -rel_floor·trace.

    Args:
        matrix (ndarray): Square complex matrix
        rel_floor (float): Tolerance relative to the trace

    Returns:
        bool: True when Hermitian (to rounding) and PSD within tolerance
    """
    matrix = np.asarray(matrix)
    scale = max(float(np.abs(np.trace(matrix))), 1.0)
    if np.max(np.abs(matrix - np.conj(matrix.T)), initial=0.0) > 1e-9 * scale:
        return False
    eigenvalues = linalg.eigh(herm(matrix), eigvals_only=True)
    return bool(eigenvalues[0] >= -rel_floor * scale)

def _hermitian_eig(matrix):
    eigenvalues, eigenvectors = linalg.eigh(herm(np.asarray(matrix, dtype=complex)))
    return eigenvalues, eigenvectors

def hermitian_sqrt(matrix):
    """
    Hermitian square root of a PSD matrix; tiny negative eigenvalues are clipped.

    Args:
        matrix (ndarray): Hermitian PSD matrix

    Returns:
        ndarray: A^{1/2}
    """
    eigenvalues, eigenvectors = _hermitian_eig(matrix)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    return (eigenvectors * np.sqrt(eigenvalues)) @ np.conj(eigenvectors.T)

def hermitian_inv_sqrt(matrix):
    """
    Hermitian inverse square root of a PD matrix.

    Args:
        matrix (ndarray): Hermitian positive definite matrix

    Returns:
        ndarray: A^{-1/2} (Hermitian, so A^{-H/2} is the same matrix)

    Raises:
        NumericalError: If the smallest eigenvalue is not positive.
    """
    eigenvalues, eigenvectors = _hermitian_eig(matrix)
    if eigenvalues[0] <= 0:
        raise NumericalError(f"Matrix is not positive definite (smallest eigenvalue {eigenvalues[0]:.3e})")
    return (eigenvectors / np.sqrt(eigenvalues)) @ np.conj(eigenvectors.T)

def phase_normalize_columns(vectors, rel_tol=1e-12):
    """
    Rotate each column so its first non-negligible entry is real-positive.

    Args:
        vectors (ndarray): Matrix whose columns are normalized in place of a copy
        rel_tol (float): Entries below rel_tol·max|column| count as zero

    Returns:
        ndarray: Phase-normalized copy
    """
    vectors = np.array(vectors, dtype=complex, copy=True)
    for col in range(vectors.shape[1]):
        column = vectors[:, col]
        magnitudes = np.abs(column)
        threshold = rel_tol * magnitudes.max(initial=0.0)
        nonzero = np.flatnonzero(magnitudes > threshold)
        if nonzero.size:
            lead = column[nonzero[0]]
            vectors[:, col] = column * (np.conj(lead) / abs(lead))
    return vectors
