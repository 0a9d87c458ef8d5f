"""Ergodic downlink SINR under conjugate beamforming with imperfect CSI.

With MMSE channel estimates of quality

    alpha[m, k] = rho_u * tau * beta[m, k]**2 / (1 + rho_u * tau * beta[m, k])

and per-AP power fractions eta[m, k] >= 0 with sum_k eta[m, k] <= 1, the
achievable SINR of user k is

                rho_d * (sum_m sqrt(alpha[m, k] * eta[m, k]))**2
    SINR_k = -----------------------------------------------------
              1 + rho_d * sum_m beta[m, k] * sum_j eta[m, j]

The numerator is coherent beamforming gain; the denominator collects noise
plus the total power each AP radiates weighted by how strongly it is heard
by user k.  Everything here is plain numpy on (M, K) arrays.
"""

from __future__ import annotations

import numpy as np


def compute_alpha(beta: np.ndarray, rho_u: float, tau: int) -> np.ndarray:
    """Channel estimate quality matrix, same shape as beta."""
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 2:
        raise ValueError(f"beta must be 2-D (M, K), got shape {beta.shape}")
    if np.any(beta < 0):
        raise ValueError("beta entries must be non-negative")
    if rho_u <= 0:
        raise ValueError(f"rho_u must be positive, got {rho_u}")
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    g = rho_u * tau * beta
    return g * beta / (1.0 + g)


def compute_sinr(beta: np.ndarray, alpha: np.ndarray, eta: np.ndarray,
                 rho_d: float) -> np.ndarray:
    """Per-user SINR vector of length K for one power allocation.

    eta must be elementwise non-negative; feasibility of the per-AP budget is
    not enforced here (use is_feasible) so that infeasible candidates can
    still be scored during search.
    """
    beta = np.asarray(beta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if beta.shape != alpha.shape or beta.shape != eta.shape:
        raise ValueError(f"shape mismatch: beta {beta.shape}, alpha {alpha.shape}, "
                         f"eta {eta.shape}")
    if rho_d <= 0:
        raise ValueError(f"rho_d must be positive, got {rho_d}")
    if np.any(eta < 0):
        raise ValueError("eta entries must be non-negative")
    gain = np.sqrt(alpha * eta).sum(axis=0)
    ap_load = eta.sum(axis=1)
    interference = beta.T @ ap_load
    return rho_d * gain * gain / (1.0 + rho_d * interference)


def compute_sinr_batch(beta: np.ndarray, alpha: np.ndarray, eta: np.ndarray,
                       rho_d: float) -> np.ndarray:
    """SINR for a batch of allocations: eta (..., M, K) -> (..., K).

    beta and alpha may be (M, K) or broadcastable against eta.  No input
    validation beyond shape compatibility; intended for inner loops.
    """
    gain = np.sqrt(alpha * np.maximum(eta, 0.0)).sum(axis=-2)
    ap_load = eta.sum(axis=-1)
    interference = np.einsum("...mk,...m->...k", np.broadcast_to(beta, eta.shape), ap_load)
    return rho_d * gain * gain / (1.0 + rho_d * interference)


def min_sinr(sinr: np.ndarray) -> float:
    """Worst-user SINR, the quantity max-min power control maximises."""
    return float(np.min(sinr))


def spectral_efficiency(sinr: np.ndarray) -> np.ndarray:
    """Per-user spectral efficiency log2(1 + SINR) in bit/s/Hz."""
    return np.log2(1.0 + np.asarray(sinr, dtype=float))


def is_feasible(eta: np.ndarray, tol: float = 1e-9) -> bool:
    """Check eta >= 0 and per-AP budget sum_k eta[m, k] <= 1 + tol."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        return False
    return bool(np.all(eta.sum(axis=1) <= 1.0 + tol))
