"""Slow dense reference computations used as ground truth by tests.

Everything here works on full matrices and uses LAPACK through
``numpy.linalg`` so it shares no code path with :mod:`mofa.linalg` or
:mod:`mofa.factor`.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .factor import MomentumFactor

MAX_DIM = 256
MAX_STEPS = 1000


def _check_trace(trace: Sequence[np.ndarray]) -> list[np.ndarray]:
    trace = [np.asarray(G, dtype=np.float64) for G in trace]
    if not trace:
        raise ValueError("gradient trace is empty")
    shape = trace[0].shape
    if any(G.shape != shape for G in trace):
        raise ValueError("gradient trace has mixed shapes")
    if max(shape) > MAX_DIM or len(trace) > MAX_STEPS:
        raise ValueError(f"oracle capped at {MAX_DIM}x{MAX_DIM} and {MAX_STEPS} steps")
    return trace


def dense_svd(A) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    U, s, Vt = np.linalg.svd(np.asarray(A, dtype=np.float64), full_matrices=False)
    return U, s, Vt.T


def dense_truncate(A, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    U, s, V = dense_svd(A)
    return U[:, :r], s[:r], V[:, :r]


def dense_truncate_matrix(A, r: int) -> np.ndarray:
    U, s, V = dense_truncate(A, r)
    return (U * s) @ V.T


def tangent_projection(G, U, V) -> np.ndarray:
    """``P_U G + G P_V - P_U G P_V`` with explicit projector matrices."""
    G = np.asarray(G, dtype=np.float64)
    PU = U @ U.T
    PV = V @ V.T
    return PU @ G + G @ PV - PU @ G @ PV


def tangent_residual(G, U, V) -> float:
    G = np.asarray(G, dtype=np.float64)
    PU = U @ U.T
    PV = V @ V.T
    return float(np.linalg.norm((np.eye(PU.shape[0]) - PU) @ G @ (np.eye(PV.shape[0]) - PV)))


def dense_momentum(trace: Sequence[np.ndarray], beta: float, grad_scale: float = 1.0) -> np.ndarray:
    """``sum_i beta^(t-i) * grad_scale * G_i`` by direct summation."""
    trace = _check_trace(trace)
    t = len(trace) - 1
    M = np.zeros_like(trace[0])
    for i, G in enumerate(trace):
        M = M + beta ** (t - i) * grad_scale * G
    return M


def dense_umf_step(G, U, sigma, V, beta: float, r: int, grad_scale: float = 1.0):
    """One naive update: truncated SVD of ``grad_scale * Proj(G) + beta * U diag(sigma) V^T``.

    Returns ``(U, sigma, V, target)`` where ``target`` is the dense matrix being
    truncated, so callers can check the singular-value gap.
    """
    target = grad_scale * tangent_projection(G, U, V) + beta * (U * sigma) @ V.T
    U2, s2, V2 = dense_truncate(target, r)
    return U2, s2, V2, target


def dense_umf(trace: Sequence[np.ndarray], beta: float, r: int, grad_scale: float = 1.0) -> list[MomentumFactor]:
    """Naive recursion ``M_t = SVD_r(grad_scale * Proj_t(G_t) + beta * M_{t-1})``.

    The first gradient initializes the factor (``SVD_r(grad_scale * G_0)``);
    each later gradient is projected onto the tangent space of the previous
    dense factor. One factor is returned per gradient.
    """
    trace = _check_trace(trace)
    U, s, V = dense_truncate(grad_scale * trace[0], r)
    out = [MomentumFactor(U, s, V)]
    for G in trace[1:]:
        U, s, V, _ = dense_umf_step(G, U, s, V, beta, r, grad_scale)
        out.append(MomentumFactor(U, s, V))
    return out


def projection_residual_scan(G, L, R, alphas: tuple[float, float, float]) -> float:
    """``||a1 L L^T G + a2 G R R^T + a3 L L^T G R R^T - G||_F`` for arbitrary sketches."""
    G = np.asarray(G, dtype=np.float64)
    a1, a2, a3 = alphas
    PL = L @ L.T
    PR = R @ R.T
    approx = a1 * PL @ G + a2 * G @ PR + a3 * PL @ G @ PR
    return float(np.linalg.norm(approx - G))


def energy_ratio(M, r: int) -> float:
    """Fraction of ``||M||_F^2`` held by the top ``r`` singular values (1 for ``M = 0``)."""
    M = np.asarray(M, dtype=np.float64)
    if not 0 <= r <= min(M.shape):
        raise ValueError(f"rank {r} out of range for shape {M.shape}")
    s = np.linalg.svd(M, compute_uv=False)
    total = float(np.sum(s * s))
    if total == 0.0:
        return 1.0
    return min(1.0, float(np.sum(s[:r] ** 2)) / total)


def factorization_error(f: MomentumFactor, M_dense) -> tuple[float, float]:
    """Frobenius and nuclear norm of ``U diag(sigma) V^T - M_dense``."""
    D = f.dense() - np.asarray(M_dense, dtype=np.float64)
    s = np.linalg.svd(D, compute_uv=False)
    return float(np.linalg.norm(D)), float(np.sum(s))
