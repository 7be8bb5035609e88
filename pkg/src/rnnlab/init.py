"""Sparse Gaussian initialization with spectral-radius control.

Each hidden unit gets exactly k nonzero Gaussian incoming recurrent weights
(the rest exactly zero), then the whole recurrent matrix is rescaled so its
spectral radius hits a target close to 1. Input and output weights are dense
Gaussian with a small std-dev; biases start at zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .params import RnnParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InitSpec:
    sigma_hh: float = 1e-3
    sigma_ih: float = 1e-2
    sparsify_k: int = 15
    rho_target: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_hh <= 0 or self.sigma_ih <= 0:
            raise ContractError("sigma_hh and sigma_ih must be > 0")
        if self.sparsify_k < 1:
            raise ContractError("sparsify_k must be >= 1")
        if self.rho_target <= 0:
            raise ContractError("rho_target must be > 0")


def sparse_gaussian(rows: int, cols: int, k: int, sigma: float, rng) -> np.ndarray:
    """Matrix with exactly k nonzero N(0, sigma) entries per row, at uniformly
    chosen positions; every other entry is exactly zero."""
    if k > cols:
        raise ContractError(f"k={k} exceeds cols={cols}")
    m = np.zeros((rows, cols))
    for r in range(rows):
        idx = rng.choice(cols, size=k, replace=False)
        m[r, idx] = rng.normal(0.0, sigma, size=k)
    return m


def power_radius(matrix: np.ndarray, tol: float = 1e-10,
                 max_iter: int = 10000, seed: int = 0,
                 block: int = 6):
    """Spectral radius by block power (subspace) iteration; returns
    (rho, converged).

    A complex-conjugate dominant pair defeats single-vector power iteration
    in real arithmetic, so a small orthonormal block is iterated instead and
    the dominant Ritz value of the projected matrix is extracted each sweep.
    Convergence is declared when the dominant Ritz pair's residual
    ||A x - lambda x|| drops below tol. A (numerically) rank-collapsed block
    is restarted from fresh random directions rather than deflated; a matrix
    that annihilates several random blocks is reported as radius zero.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractError(f"matrix must be square, got {matrix.shape}")
    n = matrix.shape[0]
    if n == 0:
        return 0.0, True
    scale = np.max(np.abs(matrix))
    if scale == 0.0:
        return 0.0, True

    m = min(n, block)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, m)))
    rho = 0.0
    restarts = 0
    for _ in range(max_iter):
        z = matrix @ q
        if np.linalg.norm(z) <= 1e-14 * scale * np.sqrt(n):
            restarts += 1
            if restarts > 5:
                return 0.0, True  # numerically nilpotent
            q, _ = np.linalg.qr(rng.standard_normal((n, m)))
            continue
        h = q.T @ z  # projected m x m matrix (q orthonormal)
        vals, vecs = np.linalg.eig(h)
        i = int(np.argmax(np.abs(vals)))
        lam = vals[i]
        x = q.astype(complex) @ vecs[:, i]
        x /= np.linalg.norm(x)
        resid = np.linalg.norm(matrix @ x - lam * x)
        rho = float(abs(lam))
        if resid <= tol * max(rho, 1e-3 * scale):
            return rho, True
        q, _ = np.linalg.qr(z)
    return rho, False


def spectral_radius(matrix: np.ndarray, tol: float = 1e-10,
                    max_iter: int = 10000, seed: int = 0) -> float:
    """Largest |eigenvalue| of a square matrix (power iteration)."""
    rho, converged = power_radius(matrix, tol=tol, max_iter=max_iter, seed=seed)
    if not converged:
        log.warning("power iteration did not converge; returning best estimate "
                    "%.6g", rho)
    return rho


def rescale_spectral(matrix: np.ndarray, rho_target: float) -> np.ndarray:
    """Scale the matrix so its spectral radius equals rho_target (within 1e-6).
    The sparsity pattern is unchanged; every nonzero scales by one factor."""
    if rho_target <= 0:
        raise ContractError("rho_target must be > 0")
    rho = spectral_radius(matrix)
    if rho <= 0.0:
        raise ContractError("cannot rescale a matrix with zero spectral radius")
    scaled = matrix * (rho_target / rho)
    # One or two correction passes absorb any estimator error.
    for _ in range(3):
        measured = spectral_radius(scaled)
        if abs(measured - rho_target) <= 1e-8 * max(1.0, rho_target):
            break
        scaled = scaled * (rho_target / measured)
    return scaled


def init_params(spec: InitSpec, sizes) -> RnnParams:
    """Build RnnParams for sizes = (n_input, n_hidden, n_output).

    w_hh: sparse Gaussian (k nonzeros per row) rescaled to rho_target.
    w_ih, w_ho: dense Gaussian with std-dev sigma_ih. Biases zero.
    Each array draws from its own RNG stream, so arrays are independent and
    the whole init is deterministic under the seed.
    """
    n_input, n_hidden, n_output = sizes
    if spec.sparsify_k > n_hidden:
        raise ContractError(
            f"sparsify_k={spec.sparsify_k} exceeds hidden size {n_hidden}")
    streams = [np.random.default_rng(s)
               for s in np.random.SeedSequence(spec.seed).spawn(3)]
    w_hh = sparse_gaussian(n_hidden, n_hidden, spec.sparsify_k,
                           spec.sigma_hh, streams[0])
    w_hh = rescale_spectral(w_hh, spec.rho_target)
    w_ih = streams[1].normal(0.0, spec.sigma_ih, size=(n_hidden, n_input))
    w_ho = streams[2].normal(0.0, spec.sigma_ih, size=(n_output, n_hidden))
    return RnnParams(w_ih=w_ih, w_hh=w_hh, w_ho=w_ho,
                     b_h=np.zeros(n_hidden), b_o=np.zeros(n_output))
