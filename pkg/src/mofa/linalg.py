"""Dense real linear-algebra kernels.

Householder QR, one-sided Jacobi SVD, matrix norms and Newton-Schulz
orthogonalization, written against plain numpy arrays. Matrix products are
delegated to numpy; the factorizations themselves are done here so their
cost and accuracy are under our control.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_MATRIX_CAP = 512

_QR_BLOCK = 8

_EPS = np.finfo(np.float64).eps


class ContractError(ValueError):
    """Raised when an operation is called outside its documented domain."""


@dataclass(frozen=True)
class SvdTriple:
    """Thin SVD ``A = U @ diag(sigma) @ V.T`` with ``sigma`` non-increasing."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]

    def compose(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T


def _as_matrix(A, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ContractError(f"{name} has non-finite entries")
    return A


def qr_thin(A) -> tuple[np.ndarray, np.ndarray]:
    """Thin Householder QR of an ``m x k`` matrix with ``k <= m``.

    Returns ``Q`` (m x k, orthonormal columns) and upper-triangular ``R``
    (k x k) with a non-negative diagonal. No pivoting: rank-deficient input
    gives a singular ``R`` while ``Q`` stays orthonormal.
    """
    A = _as_matrix(A)
    m, k = A.shape
    if k > m:
        raise ContractError(f"qr_thin needs k <= m, got {m}x{k}")

    # Blocked (compact WY) Householder: each panel of ``_QR_BLOCK`` reflectors
    # H_1..H_b equals I - V T V^T, so trailing updates become matrix products.
    R = A.copy()
    blocks = []
    for j0 in range(0, k, _QR_BLOCK):
        j1 = min(j0 + _QR_BLOCK, k)
        V = np.zeros((m - j0, j1 - j0))
        T = np.zeros((j1 - j0, j1 - j0))
        for i, j in enumerate(range(j0, j1)):
            x = R[j:, j]
            alpha = np.sqrt(x @ x)
            if alpha == 0.0:
                continue  # zero reflector: leaves V and T columns at zero
            v = x.copy()
            v[0] += alpha if x[0] >= 0 else -alpha
            v /= np.sqrt(v @ v)
            R[j:, j:j1] -= 2.0 * np.outer(v, v @ R[j:, j:j1])
            V[j - j0 :, i] = v
            T[i, i] = 2.0
            T[:i, i] = -2.0 * (T[:i, :i] @ (V[:, :i].T @ V[:, i]))
        if j1 < k:
            C = R[j0:, j1:]
            C -= V @ (T.T @ (V.T @ C))
        blocks.append((j0, V, T))

    Q = np.zeros((m, k))
    Q[:k, :k] = np.eye(k)
    for j0, V, T in reversed(blocks):
        C = Q[j0:, j0:]
        C -= V @ (T @ (V.T @ C))

    R = np.triu(R[:k, :])
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: ``n - 1`` rounds of ``n // 2`` disjoint pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


_SCHEDULES: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}


def _jacobi_sweeps(Bt: np.ndarray, Vt: np.ndarray | None, floor: np.ndarray, max_sweeps: int) -> None:
    """In-place one-sided Jacobi on a stack ``Bt`` of shape (batch, n, p).

    Row ``i`` of each ``Bt[b]`` is a column of the matrix being orthogonalized;
    ``n`` must be even. Rotations are mirrored into ``Vt`` when given.
    """
    n = Bt.shape[1]
    if n not in _SCHEDULES:
        _SCHEDULES[n] = _round_robin(n)
    floor = floor[:, None]
    for _ in range(max_sweeps):
        rotated = False
        for lo, hi in _SCHEDULES[n]:
            X, Y = Bt[:, lo], Bt[:, hi]
            alpha = np.einsum("bij,bij->bi", X, X)
            beta = np.einsum("bij,bij->bi", Y, Y)
            gamma = np.einsum("bij,bij->bi", X, Y)
            mag = np.abs(gamma)
            active = (mag > _EPS * np.sqrt(alpha * beta)) & (mag > floor)
            if not active.any():
                continue
            rotated = True
            gamma = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(active, t, 0.0)
            c = (1.0 / np.sqrt(1.0 + t * t))[..., None]
            s = c * t[..., None]
            Bt[:, lo], Bt[:, hi] = c * X - s * Y, s * X + c * Y
            if Vt is not None:
                X, Y = Vt[:, lo], Vt[:, hi]
                Vt[:, lo], Vt[:, hi] = c * X - s * Y, s * X + c * Y
        if not rotated:
            break


def _jacobi_columns(A: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Jacobi on the columns of tall ``A`` (p >= q).

    Returns ``(B, V)`` with ``A @ V = B``, ``V`` orthogonal and the columns of
    ``B`` mutually orthogonal. Disjoint column pairs are rotated together.
    """
    p, q = A.shape
    n = q + (q % 2)
    # columns are stored as rows so pair gathers are contiguous
    Bt = np.zeros((1, n, p))
    Bt[0, :q] = A.T
    Vt = np.eye(n)[None]
    floor = np.array([(tol * np.sqrt(float(np.sum(A * A)))) ** 2])
    _jacobi_sweeps(Bt, Vt, floor, max_sweeps)
    return Bt[0, :q].T.copy(), Vt[0, :q, :q].T.copy()


def singular_values(A, tol: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """Singular values (non-increasing) of a matrix or of a stack of equal-shape matrices.

    A stack of shape (b, p, q) is processed in one batched Jacobi run.
    """
    A = np.asarray(A, dtype=np.float64)
    single = A.ndim == 2
    if single:
        A = A[None]
    if A.ndim != 3 or not np.all(np.isfinite(A)):
        raise ContractError("singular_values needs finite 2-D matrices")
    if A.shape[1] < A.shape[2]:
        A = np.swapaxes(A, 1, 2)
    b, p, q = A.shape
    if q == 0:
        out = np.zeros((b, 0))
        return out[0] if single else out
    n = q + (q % 2)
    Bt = np.zeros((b, n, p))
    Bt[:, :q] = np.swapaxes(A, 1, 2)
    floor = (tol * np.sqrt(np.sum(A * A, axis=(1, 2)))) ** 2
    _jacobi_sweeps(Bt, None, floor, max_sweeps)
    sigma = -np.sort(-np.sqrt(np.einsum("bij,bij->bi", Bt[:, :q], Bt[:, :q])), axis=1)
    return sigma[0] if single else sigma


def _complete_basis(Q: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of ``Q`` not flagged in ``keep`` by a deterministic
    orthonormal completion built from standard basis vectors."""
    m, k = Q.shape
    out = Q.copy()
    basis = [out[:, j] for j in range(k) if keep[j]]
    e = 0
    for j in range(k):
        if keep[j]:
            continue
        while True:
            v = np.zeros(m)
            v[e] = 1.0
            e += 1
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.sqrt(v @ v)
            if nv > 0.5:
                break
        v /= nv
        out[:, j] = v
        basis.append(v)
    return out


def _fix_signs(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest |entry| of each U column positive; argmax takes the lowest index on ties
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[idx, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    return U * signs, V * signs


def _svd_tall(A: np.ndarray, tol: float, max_sweeps: int) -> SvdTriple:
    p, q = A.shape
    B, V = _jacobi_columns(A, tol, max_sweeps)
    sigma = np.sqrt(np.einsum("ij,ij->j", B, B))
    order = np.argsort(-sigma, kind="stable")
    sigma, B, V = sigma[order], B[:, order], V[:, order]
    cutoff = max(p, q) * _EPS * (sigma[0] if q else 0.0)
    keep = sigma > cutoff
    U = np.zeros_like(B)
    U[:, keep] = B[:, keep] / sigma[keep]
    if not keep.all():
        U = _complete_basis(U, keep)
    return SvdTriple(U, sigma, V)


def svd_small(A, cap: int = SMALL_MATRIX_CAP, tol: float = 1e-12, max_sweeps: int = 60) -> SvdTriple:
    """Full thin SVD (k = min(p, q)) of a small dense matrix.

    Singular vectors follow a fixed sign convention (the largest-magnitude
    entry of every ``U`` column is positive) so the result is a pure function
    of ``A``.
    """
    A = _as_matrix(A)
    p, q = A.shape
    if p > cap or q > cap:
        raise ContractError(f"svd_small is capped at {cap}, got {p}x{q}")
    if p == 0 or q == 0:
        k = min(p, q)
        return SvdTriple(np.zeros((p, k)), np.zeros(k), np.zeros((q, k)))
    if p >= q:
        t = _svd_tall(A, tol, max_sweeps)
        U, V = t.U, t.V
    else:
        t = _svd_tall(A.T, tol, max_sweeps)
        U, V = t.V, t.U
    U, V = _fix_signs(U, V)
    return SvdTriple(U, t.sigma, V)


def svd_truncate(A, r: int, cap: int = SMALL_MATRIX_CAP) -> SvdTriple:
    """Top-``r`` singular triple of ``A`` (full SVD followed by truncation)."""
    A = _as_matrix(A)
    if not 0 <= r <= min(A.shape):
        raise ContractError(f"rank {r} out of range for shape {A.shape}")
    full = svd_small(A, cap=cap)
    return SvdTriple(full.U[:, :r].copy(), full.sigma[:r].copy(), full.V[:, :r].copy())


def spectral_norm_power(A, tol: float = 1e-10, max_iter: int = 1000) -> float:
    A = _as_matrix(A)
    n = A.shape[1]
    if not np.any(A):
        return 0.0
    # deterministic start with a component along every right singular vector in general
    x = np.ones(n) / np.sqrt(n) + np.linspace(0.0, 1e-3, n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = A.T @ (A @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            # start vector in the null space; fall back to a basis vector sweep
            x = np.zeros(n)
            x[int(np.argmax(np.sum(A * A, axis=0)))] = 1.0
            continue
        x = y / ny
        new = np.sqrt(ny)
        if abs(new - est) <= tol * new:
            return float(new)
        est = new
    return float(est)


def norms(A, cap: int = SMALL_MATRIX_CAP) -> tuple[float, float, float]:
    """Return ``(frobenius, nuclear, spectral)`` norms.

    Above the SVD cap the nuclear norm is unavailable (NaN) and the spectral
    norm comes from power iteration.
    """
    A = _as_matrix(A)
    fro = float(np.sqrt(np.sum(A * A)))
    if max(A.shape) <= cap:
        s = singular_values(A)
        return fro, float(np.sum(s)), float(s[0]) if s.size else 0.0
    return fro, float("nan"), spectral_norm_power(A)


def nuclear_norm(A) -> float:
    return norms(A)[1]


def nuclear_norms(stack) -> np.ndarray:
    """Nuclear norms of a stack of equal-shape matrices in one batched pass."""
    return np.sum(singular_values(stack), axis=-1)


def spectral_norm(A) -> float:
    return norms(A)[2]


def newton_schulz_orthogonalize(M, steps: int = 10) -> np.ndarray:
    """Approximate the polar factor ``U V^T`` of ``M`` with the cubic
    iteration ``X <- 1.5 X - 0.5 X X^T X``, started from ``M / (1.01 ||M||_2)``.
    """
    M = _as_matrix(M, "M")
    if not np.any(M):
        return np.zeros_like(M)
    transpose = M.shape[0] > M.shape[1]
    X = M.T if transpose else M
    X = X / (1.01 * spectral_norm(X))
    for _ in range(steps):
        X = 1.5 * X - 0.5 * (X @ X.T) @ X
    return X.T if transpose else X


def orthonormality_defect(Q: np.ndarray) -> float:
    k = Q.shape[1]
    return float(np.linalg.norm(Q.T @ Q - np.eye(k)))
