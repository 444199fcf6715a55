"""MoFaSGD and baseline optimizers behind a single functional step interface.

Every optimizer is a pure function ``step(W, G, state, cfg) -> (W_new, state_new)``.
States are immutable dataclasses; ``state_scalars`` counts the floats each
one keeps between steps (the parameter matrix itself excluded).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from . import factor as fac
from .linalg import ContractError, newton_schulz_orthogonalize, svd_small, svd_truncate

REORTH_EVERY = 100


class Kind(str, enum.Enum):
    MOFASGD = "MoFaSGD"
    SGD_MOMENTUM = "SGDMomentum"
    ADAMW = "AdamW"
    GALORE = "GaLore"
    MUON = "Muon"
    SPECTRAL_SGD = "SpectralSGD"


class GradScaleMode(str, enum.Enum):
    UNIT = "unit"
    ONE_MINUS_BETA = "one_minus_beta"


class NonFiniteGradientError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    kind: Kind = Kind.MOFASGD
    eta: float = 1e-2
    beta: float = 0.9
    beta2: float = 0.999
    rank: int = 4
    tau: int = 200
    ns_steps: int = 10
    weight_decay: float = 0.0
    eps: float = 1e-8
    grad_scale_mode: GradScaleMode = GradScaleMode.UNIT

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "grad_scale_mode", GradScaleMode(self.grad_scale_mode))
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must lie in [0, 1), got {self.beta2}")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.ns_steps < 0:
            raise ValueError(f"ns_steps must be >= 0, got {self.ns_steps}")
        if self.eps < 0 or self.weight_decay < 0:
            raise ValueError("eps and weight_decay must be non-negative")

    @property
    def grad_scale(self) -> float:
        if self.grad_scale_mode is GradScaleMode.ONE_MINUS_BETA:
            return 1.0 - self.beta
        return 1.0


@dataclass(frozen=True)
class MoFaSGDState:
    factor: Optional[fac.MomentumFactor] = None
    buffer: Optional[fac.LowRankGradBuffer] = None
    step: int = 0
    last_residual: float = float("nan")


@dataclass(frozen=True)
class MomentumState:
    M: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AdamWState:
    M: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    step: int = 0


@dataclass(frozen=True)
class GaLoreState:
    Q: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    step: int = 0
    left: bool = True
    resamples: int = 0


@dataclass(frozen=True)
class MuonState:
    M: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SpectralState:
    pass


OptimizerState = Union[MoFaSGDState, MomentumState, AdamWState, GaLoreState, MuonState, SpectralState]

_STATE_TYPES = {
    Kind.MOFASGD: MoFaSGDState,
    Kind.SGD_MOMENTUM: MomentumState,
    Kind.ADAMW: AdamWState,
    Kind.GALORE: GaLoreState,
    Kind.MUON: MuonState,
    Kind.SPECTRAL_SGD: SpectralState,
}


def init_state(cfg: OptimizerConfig) -> OptimizerState:
    return _STATE_TYPES[cfg.kind]()


def _check(W, G) -> tuple[np.ndarray, np.ndarray]:
    W = np.asarray(W, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if W.shape != G.shape:
        raise ContractError(f"gradient shape {G.shape} does not match parameter shape {W.shape}")
    if not np.all(np.isfinite(G)):
        raise NonFiniteGradientError("gradient contains NaN or Inf")
    return W, G


# -- MoFaSGD -------------------------------------------------------------


def mofasgd_accumulate(state: MoFaSGDState, G_micro) -> MoFaSGDState:
    """Add one micro-batch gradient to the low-rank buffer of an initialized state."""
    if state.factor is None:
        raise ContractError("the first MoFaSGD step needs a dense gradient to initialize the factor")
    G = np.asarray(G_micro, dtype=np.float64)
    if not np.all(np.isfinite(G)):
        raise NonFiniteGradientError("gradient contains NaN or Inf")
    buf = state.buffer if state.buffer is not None else fac.empty_buffer(state.factor)
    return replace(state, buffer=fac.accumulate_lowrank_grad(buf, G, state.factor))


def step_mofasgd(W, G, state: MoFaSGDState, cfg: OptimizerConfig):
    """``W <- W - eta * U V^T`` from the updated rank-r momentum factor.

    The first call initializes the factor from ``grad_scale * G``. Later calls
    project ``G`` onto the tangent space of the current factor and run the
    factor update. Pass ``G=None`` to consume micro-batches collected with
    :func:`mofasgd_accumulate`.
    """
    W = np.asarray(W, dtype=np.float64)
    s = cfg.grad_scale
    if state.factor is None:
        if G is None:
            raise ContractError("the first MoFaSGD step needs a dense gradient")
        W, G = _check(W, G)
        f = fac.init_factor(s * G, cfg.rank)
        return W - cfg.eta * (f.U @ f.V.T), MoFaSGDState(f, None, 1, 0.0)

    f = state.factor
    residual = float("nan")
    if G is None:
        if state.buffer is None or state.buffer.micro_batches == 0:
            raise ContractError("no gradient given and the micro-batch buffer is empty")
        buf = state.buffer
    else:
        W, G = _check(W, G)
        if state.buffer is not None and state.buffer.micro_batches:
            buf = fac.accumulate_lowrank_grad(state.buffer, G, f)
        else:
            buf, residual = fac.tangent_project(G, f)
    if W.shape != f.shape:
        raise ContractError(f"parameter shape {W.shape} does not match factor shape {f.shape}")

    f_new = fac.umf_update(buf, f, cfg.beta, s)
    if (state.step + 1) % REORTH_EVERY == 0:
        f_new = fac.reorthogonalize(f_new)
    return W - cfg.eta * (f_new.U @ f_new.V.T), MoFaSGDState(f_new, None, state.step + 1, residual)


# -- baselines -----------------------------------------------------------


def step_sgd_momentum(W, G, state: MomentumState, cfg: OptimizerConfig):
    W, G = _check(W, G)
    M = G.copy() if state.M is None else cfg.beta * state.M + G
    return W - cfg.eta * M, MomentumState(M)


def step_adamw(W, G, state: AdamWState, cfg: OptimizerConfig):
    W, G = _check(W, G)
    b1, b2 = cfg.beta, cfg.beta2
    M = np.zeros_like(G) if state.M is None else state.M
    V = np.zeros_like(G) if state.V is None else state.V
    t = state.step + 1
    M = b1 * M + (1 - b1) * G
    V = b2 * V + (1 - b2) * G * G
    m_hat = M / (1 - b1**t)
    v_hat = V / (1 - b2**t)
    W = W * (1 - cfg.eta * cfg.weight_decay)
    W = W - cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return W, AdamWState(M, V, t)


def step_galore(W, G, state: GaLoreState, cfg: OptimizerConfig):
    """Adam moments kept in a rank-r projection of the gradient.

    The basis is resampled from the top-r singular vectors of the current
    gradient every ``tau`` steps; moments are carried over unchanged.
    The smaller side of the matrix is projected.
    """
    W, G = _check(W, G)
    m, n = G.shape
    left = m <= n
    r = min(cfg.rank, m, n)
    t = state.step
    Q, resamples = state.Q, state.resamples
    if Q is None or t % cfg.tau == 0:
        t_svd = svd_truncate(G, r)
        Q = t_svd.U if left else t_svd.V
        resamples += 1
    G_r = Q.T @ G if left else G @ Q
    b1, b2 = cfg.beta, cfg.beta2
    M = np.zeros_like(G_r) if state.M is None else state.M
    V = np.zeros_like(G_r) if state.V is None else state.V
    M = b1 * M + (1 - b1) * G_r
    V = b2 * V + (1 - b2) * G_r * G_r
    k = t + 1
    N = (M / (1 - b1**k)) / (np.sqrt(V / (1 - b2**k)) + cfg.eps)
    update = Q @ N if left else N @ Q.T
    return W - cfg.eta * update, GaLoreState(Q, M, V, k, left, resamples)


def step_muon(W, G, state: MuonState, cfg: OptimizerConfig):
    W, G = _check(W, G)
    M = G.copy() if state.M is None else cfg.beta * state.M + G
    return W - cfg.eta * newton_schulz_orthogonalize(M, cfg.ns_steps), MuonState(M)


def polar_factor(G) -> np.ndarray:
    """``U V^T`` over the non-negligible singular triples of ``G``."""
    t = svd_small(G)
    if t.sigma.size == 0 or t.sigma[0] == 0.0:
        return np.zeros_like(np.asarray(G, dtype=np.float64))
    keep = t.sigma > max(G.shape) * np.finfo(np.float64).eps * t.sigma[0]
    return t.U[:, keep] @ t.V[:, keep].T


def step_spectral_sgd(W, G, state: SpectralState, cfg: OptimizerConfig):
    W, G = _check(W, G)
    return W - cfg.eta * polar_factor(G), state


_STEPS = {
    Kind.MOFASGD: step_mofasgd,
    Kind.SGD_MOMENTUM: step_sgd_momentum,
    Kind.ADAMW: step_adamw,
    Kind.GALORE: step_galore,
    Kind.MUON: step_muon,
    Kind.SPECTRAL_SGD: step_spectral_sgd,
}


def step(W, G, state: OptimizerState, cfg: OptimizerConfig):
    return _STEPS[cfg.kind](W, G, state, cfg)


def state_scalars(state: OptimizerState, shape: Optional[tuple[int, int]] = None, rank: Optional[int] = None) -> int:
    """Optimizer-state floats kept between steps, excluding ``W`` itself.

    States that have not taken a step yet are sized from ``shape`` and
    ``rank`` when given, otherwise they count as empty. The MoFaSGD
    micro-batch buffer is transient and reported by :func:`buffer_scalars`.
    """
    if isinstance(state, MoFaSGDState):
        if state.factor is not None:
            return state.factor.scalar_count()
        if shape is None or rank is None:
            return 0
        m, n = shape
        return m * rank + n * rank + rank
    if isinstance(state, GaLoreState):
        if state.Q is not None:
            return state.Q.size + state.M.size + state.V.size
        if shape is None or rank is None:
            return 0
        small, large = sorted(shape)
        return small * rank + 2 * large * rank
    if isinstance(state, AdamWState):
        if state.M is not None:
            return state.M.size + state.V.size
        return 0 if shape is None else 2 * shape[0] * shape[1]
    if isinstance(state, (MomentumState, MuonState)):
        if state.M is not None:
            return state.M.size
        return 0 if shape is None else shape[0] * shape[1]
    return 0


def buffer_scalars(shape: tuple[int, int], rank: int) -> int:
    """Size of the fused low-rank gradient buffer: ``GV``, ``U^T G`` and ``U^T G V``."""
    m, n = shape
    return m * rank + n * rank + rank * rank
