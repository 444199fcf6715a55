"""Rank and resampling-period ablations, and the empirical convergence-rate check."""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import replace

import numpy as np

from .. import optimizers as opt
from ..linalg import nuclear_norms
from ..problems import ProblemKind, full_loss_grad, initial_weights, sample_grad
from .config import ExperimentConfig
from .runner import execute

SLOPE_BAND = (-0.75, -0.25)


def _final_only(cfg: ExperimentConfig) -> ExperimentConfig:
    # ablations need only the endpoints; skipping per-step norms keeps them cheap
    return replace(cfg, log_every=cfg.steps, oracle_check=False)


def _non_increasing(values) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


def ablate_rank(base_cfg: ExperimentConfig, ranks, seeds: int = 20, kinds=(opt.Kind.MOFASGD, opt.Kind.GALORE)) -> dict:
    """Final loss, runtime and throughput per (optimizer, rank), each over ``seeds`` runs.

    Seed ``s`` shifts both the dataset seed and the sampling seed, so the median
    is taken over independent problem instances. ``monotone`` is the check that
    the MoFaSGD median final loss is non-increasing in ``r``.
    """
    ranks = [int(r) for r in ranks]
    m, n = base_cfg.problem.shape
    for r in ranks:
        if not 1 <= r <= min(m, n):
            raise ValueError(f"rank {r} outside [1, {min(m, n)}]")
    rows = []
    for kind in kinds:
        for r in ranks:
            losses, runtime, steps = [], 0.0, 0
            for s in range(seeds):
                cfg = _final_only(
                    replace(
                        base_cfg,
                        seed=base_cfg.seed + s,
                        problem=replace(base_cfg.problem, seed=base_cfg.problem.seed + s),
                        optimizer=replace(base_cfg.optimizer, kind=kind, rank=r),
                    )
                )
                res = execute(cfg)
                losses.append(res.records[-1].loss)
                runtime += res.runtime_s
                steps += res.records[-1].step
            rows.append(
                {
                    "optimizer": opt.Kind(kind).value,
                    "rank": r,
                    "final_loss_median": statistics.median(losses),
                    "final_losses": losses,
                    "runtime_s": runtime / seeds,
                    "throughput_steps_per_s": steps / runtime if runtime > 0 else None,
                }
            )
    mofa = [row["final_loss_median"] for row in rows if row["optimizer"] == opt.Kind.MOFASGD.value]
    return {
        "ranks": ranks,
        "seeds": seeds,
        "steps": base_cfg.steps,
        "rows": rows,
        "monotone": _non_increasing(mofa) if mofa else None,
    }


def ablate_tau(base_cfg: ExperimentConfig, taus) -> dict:
    """GaLore final loss and subspace-resample count per period ``tau``; one shared seed."""
    rows = []
    for tau in taus:
        cfg = _final_only(replace(base_cfg, optimizer=replace(base_cfg.optimizer, kind=opt.Kind.GALORE, tau=int(tau))))
        res = execute(cfg)
        rows.append(
            {
                "tau": int(tau),
                "final_loss": res.records[-1].loss,
                "resamples": res.state.resamples,
                "completed": not res.aborted,
                "runtime_s": res.runtime_s,
            }
        )
    return {"taus": [int(t) for t in taus], "steps": base_cfg.steps, "seed": base_cfg.seed, "rows": rows}


SCHEDULES = ("inverse_sqrt", "constant")


def averaged_nuclear_norm(cfg: ExperimentConfig, horizon: int, seeds: int = 10, schedule: str = "inverse_sqrt") -> np.ndarray:
    """Per-seed ``(1/T) sum_{t<T} ||grad L(W_t)||_*``.

    The step size is ``eta / sqrt(T)`` (``cfg.optimizer.eta`` is the constant
    of the schedule) or ``eta`` itself for ``schedule="constant"``. Seeds run
    in lockstep so the nuclear norms of all iterates are taken in one batched
    call per step.
    """
    if schedule not in SCHEDULES:
        raise ValueError(f"schedule must be one of {SCHEDULES}")
    spec = cfg.problem
    eta = cfg.optimizer.eta / math.sqrt(horizon) if schedule == "inverse_sqrt" else cfg.optimizer.eta
    ocfg = replace(cfg.optimizer, eta=eta)
    rngs = [np.random.default_rng([cfg.seed + s, horizon]) for s in range(seeds)]
    Ws = [initial_weights(spec) for _ in range(seeds)]
    states = [opt.init_state(ocfg) for _ in range(seeds)]
    total = np.zeros(seeds)
    for _ in range(horizon):
        total += nuclear_norms(np.stack([full_loss_grad(spec, W)[1] for W in Ws]))
        for i in range(seeds):
            G = sample_grad(spec, Ws[i], rngs[i]).gradient
            Ws[i], states[i] = opt.step(Ws[i], G, states[i], ocfg)
    return total / horizon


def fit_slope(horizons, metric) -> float:
    """Least-squares slope of ``log(metric)`` against ``log(T)``."""
    x, y = np.log(np.asarray(horizons, float)), np.log(np.asarray(metric, float))
    return float(np.polyfit(x, y, 1)[0])


def rate_check(
    cfg: ExperimentConfig,
    horizons,
    seeds: int = 10,
    band: tuple[float, float] = SLOPE_BAND,
    schedule: str = "inverse_sqrt",
) -> dict:
    """Fit the decay exponent of the averaged gradient nuclear norm across horizons.

    A ``1/sqrt(T)`` rate gives slope -1/2; ``passed`` checks the slope lies in ``band``.
    """
    horizons = [int(T) for T in horizons]
    if len(horizons) < 2 or any(b <= a for a, b in zip(horizons, horizons[1:])) or horizons[0] < 1:
        raise ValueError(f"horizons must be increasing positive ints, got {horizons}")
    if seeds < 1:
        raise ValueError("seeds must be positive")
    start = time.perf_counter()
    per_seed = [averaged_nuclear_norm(cfg, T, seeds, schedule) for T in horizons]
    metric = [float(np.mean(v)) for v in per_seed]
    slope = fit_slope(horizons, metric)
    ratios = [a / b for a, b in zip(metric, metric[1:])]
    return {
        "problem": ProblemKind(cfg.problem.kind).value,
        "optimizer": opt.Kind(cfg.optimizer.kind).value,
        "eta_constant": cfg.optimizer.eta,
        "schedule": schedule,
        "horizons": horizons,
        "seeds": seeds,
        "metric": metric,
        "metric_stderr": [float(np.std(v, ddof=1) / math.sqrt(seeds)) if seeds > 1 else 0.0 for v in per_seed],
        "successive_ratios": ratios,
        "slope": slope,
        "band": list(band),
        "passed": band[0] <= slope <= band[1],
        "runtime_s": time.perf_counter() - start,
    }
