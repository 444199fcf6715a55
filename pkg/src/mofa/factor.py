"""Rank-r momentum factor: tangent projection, factor update and accumulation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import count

import numpy as np

from .linalg import ContractError, orthonormality_defect, qr_thin, svd_small, svd_truncate

ORTHO_TOL = 1e-8

_generations = count(1)


class StaleBufferError(RuntimeError):
    """A gradient buffer was combined with a factor other than the one it was built against."""


@dataclass(frozen=True)
class MomentumFactor:
    """Momentum estimate ``U @ diag(sigma) @ V.T`` with orthonormal ``U``, ``V``.

    ``generation`` changes on every update so buffers built against an older
    factor can be detected.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    generation: int = field(default_factory=lambda: next(_generations))

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def dense(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T

    def defect(self) -> float:
        return max(orthonormality_defect(self.U), orthonormality_defect(self.V))

    def scalar_count(self) -> int:
        m, n = self.shape
        return m * self.rank + n * self.rank + self.rank


@dataclass(frozen=True)
class LowRankGradBuffer:
    """Projected gradient blocks ``G V``, ``U^T G`` and ``U^T G V`` summed over micro-batches."""

    GV: np.ndarray
    UtG: np.ndarray
    UtGV: np.ndarray
    micro_batches: int
    generation: int

    def scalar_count(self) -> int:
        return self.GV.size + self.UtG.size + self.UtGV.size

    def tangent_matrix(self, f: MomentumFactor) -> np.ndarray:
        """Dense tangent-space gradient ``U U^T G + G V V^T - U U^T G V V^T``."""
        U, V = f.U, f.V
        return U @ self.UtG + self.GV @ V.T - U @ self.UtGV @ V.T


def init_factor(G0, r: int) -> MomentumFactor:
    """Initial factor from the truncated SVD of the first gradient."""
    G0 = np.asarray(G0, dtype=np.float64)
    if not 1 <= r <= min(G0.shape):
        raise ContractError(f"rank {r} out of range for gradient of shape {G0.shape}")
    t = svd_truncate(G0, r)
    return MomentumFactor(t.U, t.sigma, t.V)


def empty_buffer(f: MomentumFactor) -> LowRankGradBuffer:
    m, n = f.shape
    r = f.rank
    return LowRankGradBuffer(np.zeros((m, r)), np.zeros((r, n)), np.zeros((r, r)), 0, f.generation)


def _check_grad(G, f: MomentumFactor) -> np.ndarray:
    G = np.asarray(G, dtype=np.float64)
    if G.shape != f.shape:
        raise ContractError(f"gradient shape {G.shape} does not match factor shape {f.shape}")
    return G


def tangent_project(G, f: MomentumFactor) -> tuple[LowRankGradBuffer, float]:
    """Project ``G`` onto the tangent space at ``f``.

    Returns the projected blocks and ``||(I - U U^T) G (I - V V^T)||_F``,
    the part of ``G`` the projection discards.
    """
    G = _check_grad(G, f)
    U, V = f.U, f.V
    GV = G @ V
    UtG = U.T @ G
    UtGV = UtG @ V
    residual = G - U @ UtG - GV @ V.T + U @ UtGV @ V.T
    buf = LowRankGradBuffer(GV, UtG, UtGV, 1, f.generation)
    return buf, float(np.sqrt(np.sum(residual * residual)))


def accumulate_lowrank_grad(buffer: LowRankGradBuffer, G_micro, f: MomentumFactor) -> LowRankGradBuffer:
    if buffer.generation != f.generation:
        raise StaleBufferError(
            f"buffer built against factor generation {buffer.generation}, got {f.generation}"
        )
    G = _check_grad(G_micro, f)
    GV = G @ f.V
    UtG = f.U.T @ G
    return LowRankGradBuffer(
        buffer.GV + GV,
        buffer.UtG + UtG,
        buffer.UtGV + UtG @ f.V,
        buffer.micro_batches + 1,
        buffer.generation,
    )


def _qr_block(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # 2r can exceed the matrix side at high rank; then Q is square and R is wide
    m, k = A.shape
    if k <= m:
        return qr_thin(A)
    Q, _ = qr_thin(A[:, :m])
    return Q, Q.T @ A


def core_matrix(buffer: LowRankGradBuffer, f: MomentumFactor, beta: float, grad_scale: float = 1.0):
    """QR factors of ``[U | GV]`` and ``[V | G^T U]`` and the ``2r x 2r`` core ``S``.

    ``Q_U @ S @ Q_V.T`` equals ``grad_scale * tangent(G) + beta * U diag(sigma) V^T``.
    When ``2r`` exceeds a matrix side the core shrinks to that side.
    """
    r = f.rank
    GV = grad_scale * buffer.GV
    UtG = grad_scale * buffer.UtG
    UtGV = grad_scale * buffer.UtGV
    Q_U, R_U = _qr_block(np.hstack([f.U, GV]))
    Q_V, R_V = _qr_block(np.hstack([f.V, UtG.T]))
    eye = np.eye(r)
    inner = np.block([[beta * np.diag(f.sigma) - UtGV, eye], [eye, np.zeros((r, r))]])
    return Q_U, Q_V, R_U @ inner @ R_V.T


def umf_update(buffer: LowRankGradBuffer, f: MomentumFactor, beta: float, grad_scale: float = 1.0) -> MomentumFactor:
    """Rank-r factor of ``grad_scale * tangent(G) + beta * U diag(sigma) V^T``.

    Two thin QRs and one ``2r x 2r`` SVD; the full gradient is never needed.
    """
    if not 0.0 <= beta < 1.0:
        raise ContractError(f"beta must lie in [0, 1), got {beta}")
    if grad_scale <= 0:
        raise ContractError(f"grad_scale must be positive, got {grad_scale}")
    if buffer.generation != f.generation:
        raise StaleBufferError(
            f"buffer built against factor generation {buffer.generation}, got {f.generation}"
        )
    r = f.rank
    Q_U, Q_V, S = core_matrix(buffer, f, beta, grad_scale)
    inner = svd_small(S)
    return MomentumFactor(Q_U @ inner.U[:, :r], inner.sigma[:r].copy(), Q_V @ inner.V[:, :r])


def reorthogonalize(f: MomentumFactor, tol: float = ORTHO_TOL) -> MomentumFactor:
    """Restore orthonormal factors when drift exceeds ``tol``; the product is kept."""
    if f.defect() <= tol:
        return f
    Q_U, R_U = qr_thin(f.U)
    Q_V, R_V = qr_thin(f.V)
    inner = svd_small((R_U * f.sigma) @ R_V.T)
    return replace(
        f,
        U=Q_U @ inner.U,
        sigma=inner.sigma,
        V=Q_V @ inner.V,
        generation=next(_generations),
    )
