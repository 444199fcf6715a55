"""Synthetic matrix-valued objectives with exact and stochastic gradients.

Three problem families, all with an ``m x n`` parameter matrix ``W``:

* ``LowRankRegression``: ``1/(2N) ||W X - Y||_F^2`` with ``Y = W* X`` and a
  rank-``true_rank`` target ``W*``.
* ``MatrixQuadratic``: ``1/2 <W - W*, A (W - W*) B>`` for SPD ``A`` and ``B``.
* ``MultinomialLogistic``: softmax cross-entropy on Gaussian blobs, ``W`` is
  classes x features.

Stochastic gradients average a random minibatch of examples and add
Gaussian noise with entry-wise standard deviation ``noise_sigma / sqrt(batch)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .linalg import nuclear_norms


class ProblemKind(str, enum.Enum):
    LOW_RANK_REGRESSION = "LowRankRegression"
    MATRIX_QUADRATIC = "MatrixQuadratic"
    MULTINOMIAL_LOGISTIC = "MultinomialLogistic"


DEFAULT_SHAPES = {
    ProblemKind.LOW_RANK_REGRESSION: (64, 48),
    ProblemKind.MATRIX_QUADRATIC: (32, 32),
    ProblemKind.MULTINOMIAL_LOGISTIC: (10, 50),
}


@dataclass(frozen=True)
class ProblemSpec:
    """Problem definition; the dataset is a pure function of these fields.

    ``n_samples`` is the dataset size (ignored by the quadratic),
    ``data_rank`` optionally limits the rank of the regression inputs and
    ``condition`` is the eigenvalue spread of the quadratic's ``A`` and ``B``;
    ``init_scale`` is the entry-wise standard deviation of ``W_0`` and
    ``target_scale`` multiplies the regression target's singular values
    (2 down to 1 by default).
    """

    kind: ProblemKind = ProblemKind.LOW_RANK_REGRESSION
    shape: tuple[int, int] = (64, 48)
    true_rank: int = 4
    noise_sigma: float = 0.0
    batch: int = 32
    seed: int = 0
    n_samples: int = 512
    data_rank: Optional[int] = None
    condition: float = 10.0
    init_scale: float = 0.1
    target_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind(self.kind))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if len(self.shape) != 2 or min(self.shape) < 1:
            raise ValueError(f"shape must be two positive ints, got {self.shape}")
        m, n = self.shape
        if not 0 <= self.true_rank <= min(m, n):
            raise ValueError(f"true_rank {self.true_rank} exceeds min{self.shape}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.batch < 1 or self.n_samples < 1:
            raise ValueError("batch and n_samples must be positive")
        if self.data_rank is not None and not 1 <= self.data_rank <= n:
            raise ValueError(f"data_rank must lie in [1, {n}]")
        if self.condition < 1:
            raise ValueError("condition must be >= 1")
        if self.target_scale <= 0:
            raise ValueError("target_scale must be positive")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")


@dataclass(frozen=True)
class GradSample:
    loss: float
    gradient: np.ndarray
    batch_indices: list


@dataclass(frozen=True)
class _Data:
    W_star: np.ndarray
    X: Optional[np.ndarray] = None
    Y: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None


def _spd(rng: np.random.Generator, k: int, condition: float) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    eig = np.geomspace(1.0 / condition, 1.0, k) if k > 1 else np.ones(1)
    return (Q * eig) @ Q.T


@lru_cache(maxsize=64)
def dataset(spec: ProblemSpec) -> _Data:
    rng = np.random.default_rng([spec.seed, 7001])
    m, n = spec.shape
    if spec.kind is ProblemKind.LOW_RANK_REGRESSION:
        k = spec.true_rank
        Uk, _ = np.linalg.qr(rng.standard_normal((m, k)))
        Vk, _ = np.linalg.qr(rng.standard_normal((n, k)))
        W_star = (Uk * (spec.target_scale * np.linspace(2.0, 1.0, k))) @ Vk.T
        if spec.data_rank is None:
            X = rng.standard_normal((n, spec.n_samples))
        else:
            d = spec.data_rank
            X = rng.standard_normal((n, d)) @ rng.standard_normal((d, spec.n_samples)) / np.sqrt(d)
        return _Data(W_star=W_star, X=X, Y=W_star @ X)
    if spec.kind is ProblemKind.MATRIX_QUADRATIC:
        W_star = rng.standard_normal((m, n)) / np.sqrt(max(m, n))
        return _Data(W_star=W_star, A=_spd(rng, m, spec.condition), B=_spd(rng, n, spec.condition))
    # multinomial logistic: m classes, n features
    means = 3.0 * rng.standard_normal((m, n)) / np.sqrt(n)
    labels = rng.integers(0, m, size=spec.n_samples)
    X = means[labels] + rng.standard_normal((spec.n_samples, n))
    return _Data(W_star=means, X=X, labels=labels)


def initial_weights(spec: ProblemSpec) -> np.ndarray:
    """Deterministic starting point ``W_0`` (small Gaussian)."""
    rng = np.random.default_rng([spec.seed, 7002])
    return spec.init_scale * rng.standard_normal(spec.shape)


def _check_W(spec: ProblemSpec, W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.shape != spec.shape:
        raise ValueError(f"W has shape {W.shape}, problem expects {spec.shape}")
    return W


def _softmax_xent(W: np.ndarray, X: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    logits = X @ W.T
    logits = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.sum(np.exp(logits), axis=1))
    rows = np.arange(len(labels))
    loss = float(np.mean(logZ - logits[rows, labels]))
    P = np.exp(logits - logZ[:, None])
    P[rows, labels] -= 1.0
    return loss, P.T @ X / len(labels)


def minibatch_loss_grad(spec: ProblemSpec, W, indices) -> tuple[float, np.ndarray]:
    """Noise-free loss and gradient averaged over the given example indices."""
    W = _check_W(spec, W)
    d = dataset(spec)
    idx = np.asarray(indices, dtype=np.int64)
    if spec.kind is ProblemKind.LOW_RANK_REGRESSION:
        X, Y = d.X[:, idx], d.Y[:, idx]
        E = W @ X - Y
        return 0.5 * float(np.sum(E * E)) / len(idx), E @ X.T / len(idx)
    if spec.kind is ProblemKind.MATRIX_QUADRATIC:
        return full_loss_grad(spec, W)
    return _softmax_xent(W, d.X[idx], d.labels[idx])


def full_loss_grad(spec: ProblemSpec, W) -> tuple[float, np.ndarray]:
    W = _check_W(spec, W)
    d = dataset(spec)
    if spec.kind is ProblemKind.MATRIX_QUADRATIC:
        D = W - d.W_star
        G = d.A @ D @ d.B
        return 0.5 * float(np.sum(D * G)), G
    return minibatch_loss_grad(spec, W, np.arange(spec.n_samples))


def sample_grad(spec: ProblemSpec, W, rng: np.random.Generator) -> GradSample:
    """Unbiased stochastic gradient: minibatch average plus Gaussian noise."""
    if spec.kind is ProblemKind.MATRIX_QUADRATIC:
        idx: list = []
        loss, G = full_loss_grad(spec, W)
    else:
        idx = rng.integers(0, spec.n_samples, size=spec.batch).tolist()
        loss, G = minibatch_loss_grad(spec, W, idx)
    if spec.noise_sigma > 0:
        G = G + (spec.noise_sigma / np.sqrt(spec.batch)) * rng.standard_normal(G.shape)
    return GradSample(loss, G, idx)


def smoothness_constant(spec: ProblemSpec) -> float:
    """Known smoothness constant ``||A||_2 ||B||_2`` of the quadratic."""
    if spec.kind is not ProblemKind.MATRIX_QUADRATIC:
        raise ValueError("smoothness constant is only available for MatrixQuadratic")
    d = dataset(spec)
    return float(np.linalg.norm(d.A, 2) * np.linalg.norm(d.B, 2))


def noise_nuclear_deviation(spec: ProblemSpec, W, samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo estimate of ``E ||G - grad L(W)||_*`` and its standard error.

    This is the variance scale of the stochastic oracle measured in the
    nuclear norm.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    G_full = full_loss_grad(spec, W)[1]
    devs = nuclear_norms(np.stack([sample_grad(spec, W, rng).gradient - G_full for _ in range(samples)]))
    return float(np.mean(devs)), float(np.std(devs, ddof=1) / np.sqrt(samples))
