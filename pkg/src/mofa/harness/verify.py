"""Registry of numerical invariants, grouped into suites and run as one report.

Each property is a function returning ``(passed, total)`` case counts; it is
added to a suite with :func:`register`. ``verify("all")`` runs every suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .. import optimizers as opt
from .. import oracle
from ..factor import MomentumFactor, init_factor, tangent_project, umf_update
from ..linalg import spectral_norm
from ..problems import DEFAULT_SHAPES, ProblemKind, ProblemSpec, full_loss_grad, minibatch_loss_grad

SUITES = ("theorem1", "umf", "tracking", "memory", "gradients")

SLACK = 1e-12


@dataclass(frozen=True)
class Property:
    suite: str
    name: str
    check: Callable[[], tuple[int, int]]


REGISTRY: list[Property] = []


def register(suite: str, name: str):
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}")

    def wrap(fn):
        REGISTRY.append(Property(suite, name, fn))
        return fn

    return wrap


def properties(suite: str = "all") -> list[Property]:
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from all, {', '.join(SUITES)}")
    return [p for p in REGISTRY if suite == "all" or p.suite == suite]


def verify(suite: str = "all") -> dict:
    """Run the properties of ``suite`` and return a JSON-ready pass/fail report."""
    rows = []
    for prop in properties(suite):
        start = time.perf_counter()
        passed, total = prop.check()
        rows.append(
            {
                "suite": prop.suite,
                "property": prop.name,
                "passed": int(passed),
                "total": int(total),
                "ok": bool(passed == total),
                "seconds": round(time.perf_counter() - start, 3),
            }
        )
    return {"suite": suite, "properties": rows, "ok": bool(all(r["ok"] for r in rows))}


def _orthonormal(rng, k, r):
    return np.linalg.qr(rng.standard_normal((k, r)))[0]


def _fro(A) -> float:
    return float(np.linalg.norm(A))


# -- projection optimality ------------------------------------------------


def projection_optimality_case(rng, m=12, n=9, r=3, n_alphas=200, n_rescale=50) -> tuple[bool, bool]:
    """One optimality case: (is the (1,1,-1) residual minimal, does it equal the closed form)."""
    G = rng.standard_normal((m, n))
    L, R = _orthonormal(rng, m, r), _orthonormal(rng, n, r)
    best = oracle.projection_residual_scan(G, L, R, (1.0, 1.0, -1.0))
    closed = _fro((np.eye(m) - L @ L.T) @ G @ (np.eye(n) - R @ R.T))
    optimal = True
    for _ in range(n_alphas):
        a = tuple(rng.uniform(-2.0, 2.0, 3))
        optimal &= best <= oracle.projection_residual_scan(G, L, R, a) + SLACK
    for _ in range(n_rescale):
        # same spans, non-orthonormal sketches
        Ls = L @ rng.standard_normal((r, r))
        Rs = R @ rng.standard_normal((r, r))
        optimal &= best <= oracle.projection_residual_scan(G, Ls, Rs, (1.0, 1.0, -1.0)) + SLACK
    return bool(optimal), abs(best - closed) <= SLACK


@register("theorem1", "optimal_coefficients")
def _optimal_coefficients(cases: int = 100) -> tuple[int, int]:
    rng = np.random.default_rng(1001)
    return sum(projection_optimality_case(rng)[0] for _ in range(cases)), cases


@register("theorem1", "closed_form_residual")
def _closed_form_residual(cases: int = 100) -> tuple[int, int]:
    rng = np.random.default_rng(1001)
    return sum(projection_optimality_case(rng)[1] for _ in range(cases)), cases


@register("theorem1", "one_sided_bound")
def _one_sided_bound(cases: int = 100) -> tuple[int, int]:
    # with the top-r singular vectors of G the residual is at most the tail sum
    rng = np.random.default_rng(1002)
    ok = 0
    for _ in range(cases):
        G = rng.standard_normal((12, 9))
        U, s, V = oracle.dense_svd(G)
        res = oracle.projection_residual_scan(G, U[:, :3], V[:, :3], (1.0, 1.0, -1.0))
        ok += res <= np.sum(s[3:]) + SLACK
    return ok, cases


# -- factor update ---------------------------------------------------------


def umf_trace_check(seed: int, m=12, n=9, r=3, steps=10, beta=0.9) -> tuple[int, int]:
    """Compare fast and dense factor recursions on one random trace.

    Returns ``(matching steps, checked steps)``; steps whose dense target has
    a singular gap ``sigma_r - sigma_{r+1} <= 1e-10`` are not checked.
    """
    rng = np.random.default_rng([seed, 2001])
    trace = [rng.standard_normal((m, n)) for _ in range(steps)]
    f = init_factor(trace[0], r)
    ref = oracle.dense_umf(trace[:1], beta, r)[0]
    s0 = oracle.dense_svd(trace[0])[1]
    ok = checked = 0
    if s0[r - 1] - (s0[r] if r < len(s0) else 0.0) > 1e-10:
        checked += 1
        ok += _fro(f.dense() - ref.dense()) <= 1e-8 * (1 + _fro(ref.dense()))
    for G in trace[1:]:
        buf, _ = tangent_project(G, f)
        f = umf_update(buf, f, beta)
        U, s, V, target = oracle.dense_umf_step(G, ref.U, ref.sigma, ref.V, beta, r)
        ref = MomentumFactor(U, s, V)
        sig = oracle.dense_svd(target)[1]
        gap = sig[r - 1] - (sig[r] if r < len(sig) else 0.0)
        if gap > 1e-10:
            checked += 1
            ok += _fro(f.dense() - ref.dense()) <= 1e-8 * (1 + _fro(ref.dense()))
    return ok, checked


@register("umf", "dense_oracle_equivalence")
def _umf_equivalence(traces: int = 20) -> tuple[int, int]:
    ok = total = 0
    for seed in range(traces):
        a, b = umf_trace_check(seed)
        ok, total = ok + a, total + b
    return ok, total


@register("umf", "factor_orthonormality")
def _umf_orthonormality(steps: int = 200) -> tuple[int, int]:
    rng = np.random.default_rng(2002)
    f = init_factor(rng.standard_normal((16, 11)), 4)
    ok = 0
    for _ in range(steps):
        buf, _ = tangent_project(rng.standard_normal((16, 11)), f)
        f = umf_update(buf, f, 0.9)
        ok += f.defect() <= 1e-8 and bool(np.all(np.diff(f.sigma) <= 0)) and bool(np.all(f.sigma >= 0))
    return ok, steps


def spectral_step_check(seed: int = 0, steps: int = 50, eta: float = 0.01) -> tuple[int, int]:
    """Every MoFaSGD update with positive singular values has spectral norm ``eta``."""
    spec = ProblemSpec(kind=ProblemKind.MATRIX_QUADRATIC, shape=DEFAULT_SHAPES[ProblemKind.MATRIX_QUADRATIC], seed=seed)
    cfg = opt.OptimizerConfig(kind=opt.Kind.MOFASGD, eta=eta, rank=4)
    rng = np.random.default_rng([seed, 2003])
    W, state = rng.standard_normal(spec.shape), opt.init_state(cfg)
    ok = total = 0
    for _ in range(steps):
        G = full_loss_grad(spec, W)[1] + 0.1 * rng.standard_normal(spec.shape)
        W_new, state = opt.step(W, G, state, cfg)
        if state.factor.sigma[-1] > 0:
            total += 1
            ok += abs(spectral_norm(W_new - W) - eta) <= 1e-10
        W = W_new
    return ok, total


def scale_invariance_check(c: float, seed: int = 0, steps: int = 50) -> bool:
    """Scaling every gradient by ``c`` leaves the MoFaSGD iterates unchanged."""
    spec = ProblemSpec(kind=ProblemKind.MATRIX_QUADRATIC, shape=DEFAULT_SHAPES[ProblemKind.MATRIX_QUADRATIC], seed=seed)
    cfg = opt.OptimizerConfig(kind=opt.Kind.MOFASGD, eta=0.01, rank=4)
    W0 = np.random.default_rng([seed, 2004]).standard_normal(spec.shape)
    Wa, Wb = W0.copy(), W0.copy()
    sa, sb = opt.init_state(cfg), opt.init_state(cfg)
    for _ in range(steps):
        Wa, sa = opt.step(Wa, full_loss_grad(spec, Wa)[1], sa, cfg)
        Wb, sb = opt.step(Wb, c * full_loss_grad(spec, Wb)[1], sb, cfg)
        if _fro(Wa - Wb) > 1e-9:
            return False
    return True


@register("umf", "spectral_step_norm")
def _spectral_step() -> tuple[int, int]:
    return spectral_step_check()


@register("umf", "gradient_scale_invariance")
def _scale_invariance() -> tuple[int, int]:
    return sum(scale_invariance_check(c) for c in (0.1, 10.0)), 2


# -- exact tracking --------------------------------------------------------


def tracking_check(seed: int, m=12, n=9, r=3, steps=100, beta=0.9) -> bool:
    """Gradients confined to fixed rank-r row and column spaces are tracked exactly."""
    rng = np.random.default_rng([seed, 3001])
    Us, Vs = _orthonormal(rng, m, r), _orthonormal(rng, n, r)
    G = Us @ rng.standard_normal((r, r)) @ Vs.T
    f = init_factor(G, r)
    M = G
    for _ in range(steps):
        G = Us @ rng.standard_normal((r, r)) @ Vs.T
        buf, _ = tangent_project(G, f)
        f = umf_update(buf, f, beta)
        M = beta * M + G
        if oracle.factorization_error(f, M)[0] > 1e-8:
            return False
    return True


@register("tracking", "rank_confined_stream")
def _tracking(seeds: int = 5) -> tuple[int, int]:
    return sum(tracking_check(s) for s in range(seeds)), seeds


def widening_errors(seed: int, ranks=(1, 2, 4, 8), m=12, n=9, steps=10, beta=0.9) -> list[float]:
    """Final Frobenius tracking error of the dense factor recursion at each rank, one trace."""
    rng = np.random.default_rng([seed, 3002])
    trace = [rng.standard_normal((m, n)) for _ in range(steps)]
    M = oracle.dense_momentum(trace, beta)
    return [oracle.factorization_error(oracle.dense_umf(trace, beta, r)[-1], M)[0] for r in ranks]


@register("tracking", "rank_widening")
def _rank_widening(seeds: int = 20) -> tuple[int, int]:
    # doubling the rank never tracks the dense momentum worse on a fixed trace;
    # single-step widening (r -> r + 1) can, on rare traces
    ok = 0
    for seed in range(seeds):
        errs = widening_errors(seed)
        ok += all(b <= a + 1e-10 for a, b in zip(errs, errs[1:]))
    return ok, seeds


# -- memory ----------------------------------------------------------------


def memory_rows(m: int, n: int, r: int) -> dict:
    """Parameters plus optimizer state for MoFaSGD and GaLore, from the state objects."""
    out = {}
    for kind in (opt.Kind.MOFASGD, opt.Kind.GALORE):
        cfg = opt.OptimizerConfig(kind=kind, rank=r)
        out[kind.value] = m * n + opt.state_scalars(opt.init_state(cfg), (m, n), r)
    return out


@register("memory", "table_rows")
def _memory(cases: int = 10) -> tuple[int, int]:
    rng = np.random.default_rng(4001)
    ok = 0
    for _ in range(cases):
        m = int(rng.integers(2, 200))
        n = int(rng.integers(m, 400))
        r = int(rng.integers(1, m + 1))
        rows = memory_rows(m, n, r)
        ok += rows["MoFaSGD"] == m * n + m * r + n * r + r and rows["GaLore"] == m * n + m * r + 2 * n * r
    return ok, cases


@register("memory", "live_state_matches_formula")
def _memory_live() -> tuple[int, int]:
    # counts from a stepped state agree with the shape-only formula
    rng = np.random.default_rng(4002)
    ok = total = 0
    for kind in opt.Kind:
        cfg = opt.OptimizerConfig(kind=kind, rank=3)
        W = rng.standard_normal((7, 10))
        state = opt.init_state(cfg)
        W, state = opt.step(W, rng.standard_normal(W.shape), state, cfg)
        total += 1
        ok += opt.state_scalars(state) == opt.state_scalars(opt.init_state(cfg), W.shape, 3)
    return ok, total


# -- gradients -------------------------------------------------------------


def finite_difference_check(spec: ProblemSpec, seed: int, coords: int = 20, h: float = 1e-5, tol: float = 1e-5) -> tuple[int, int]:
    """Central differences of the full loss against the analytic gradient at one random ``W``."""
    rng = np.random.default_rng([seed, 5001])
    W = rng.standard_normal(spec.shape) * 0.5
    G = full_loss_grad(spec, W)[1]
    ok = 0
    for _ in range(coords):
        i, j = int(rng.integers(spec.shape[0])), int(rng.integers(spec.shape[1]))
        E = np.zeros(spec.shape)
        E[i, j] = h
        fd = (full_loss_grad(spec, W + E)[0] - full_loss_grad(spec, W - E)[0]) / (2 * h)
        ok += abs(fd - G[i, j]) <= tol * max(1.0, abs(G[i, j]))
    return ok, coords


@register("gradients", "finite_differences")
def _finite_differences(points: int = 5) -> tuple[int, int]:
    ok = total = 0
    for kind in ProblemKind:
        spec = ProblemSpec(kind=kind, shape=DEFAULT_SHAPES[kind])
        for seed in range(points):
            a, b = finite_difference_check(spec, seed)
            ok, total = ok + a, total + b
    return ok, total


@register("gradients", "batch_average")
def _batch_average() -> tuple[int, int]:
    # averaging every single-example gradient recovers the full gradient
    ok = total = 0
    for kind in (ProblemKind.LOW_RANK_REGRESSION, ProblemKind.MULTINOMIAL_LOGISTIC):
        spec = replace(ProblemSpec(kind=kind, shape=DEFAULT_SHAPES[kind]), n_samples=64)
        W = np.random.default_rng(5002).standard_normal(spec.shape) * 0.5
        avg = sum(minibatch_loss_grad(spec, W, [i])[1] for i in range(spec.n_samples)) / spec.n_samples
        total += 1
        ok += _fro(avg - full_loss_grad(spec, W)[1]) <= 1e-10
    return ok, total
