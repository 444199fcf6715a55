"""Training loop, per-step records and CSV/JSON output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import optimizers as opt
from ..linalg import norms
from ..oracle import energy_ratio, factorization_error
from ..problems import full_loss_grad, initial_weights, sample_grad
from .config import ExperimentConfig

SENTINEL = -1

CSV_COLUMNS = [
    "step",
    "loss",
    "grad_fro",
    "grad_nuc",
    "fact_err_fro",
    "fact_err_nuc",
    "energy_ratio",
    "wall_ns",
    "state_scalars",
    "aborted",
]


@dataclass(frozen=True)
class RunRecord:
    """Metrics at iterate ``W_step`` (``step`` updates applied).

    ``loss`` and the gradient norms use the full-batch objective. Fields that
    were not computed hold -1.
    """

    step: int
    loss: float
    grad_fro: float
    grad_nuc: float
    fact_err_fro: float = SENTINEL
    fact_err_nuc: float = SENTINEL
    energy_ratio: float = SENTINEL
    wall_ns: int = SENTINEL
    state_scalars: int = 0
    aborted: bool = False


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[RunRecord]
    W: np.ndarray
    state: object
    runtime_s: float

    @property
    def aborted(self) -> bool:
        return bool(self.records) and self.records[-1].aborted


def _dense_moment(state, tracked: np.ndarray | None) -> np.ndarray | None:
    """Dense first moment of a state, or the oracle-tracked momentum for MoFaSGD."""
    if isinstance(state, opt.MoFaSGDState):
        return tracked
    return getattr(state, "M", None) if not isinstance(state, opt.GaLoreState) else None


def execute(cfg: ExperimentConfig) -> RunResult:
    """Run the step loop and keep the final iterate and optimizer state."""
    spec, ocfg = cfg.problem, cfg.optimizer
    rng = np.random.default_rng(cfg.seed)
    W = initial_weights(spec)
    state = opt.init_state(ocfg)
    tracked = None
    records: list[RunRecord] = []
    elapsed_ns = 0
    is_mofa = ocfg.kind is opt.Kind.MOFASGD

    def log(k: int, aborted: bool = False):
        loss, G = full_loss_grad(spec, W)
        finite = math.isfinite(loss) and bool(np.all(np.isfinite(G)))
        if finite:
            fro, nuc, _ = norms(G)
        else:
            fro = nuc = float("nan")
        err_fro = err_nuc = ratio = SENTINEL
        if cfg.oracle_check and finite:
            if is_mofa and state.factor is not None and tracked is not None:
                err_fro, err_nuc = factorization_error(state.factor, tracked)
            M = _dense_moment(state, tracked)
            if M is not None:
                ratio = energy_ratio(M, min(ocfg.rank, *spec.shape))
        records.append(
            RunRecord(
                step=k,
                loss=loss,
                grad_fro=fro,
                grad_nuc=nuc,
                fact_err_fro=err_fro,
                fact_err_nuc=err_nuc,
                energy_ratio=ratio,
                wall_ns=elapsed_ns if cfg.timing else SENTINEL,
                state_scalars=opt.state_scalars(state),
                aborted=aborted or not finite,
            )
        )
        return finite

    start = time.perf_counter()
    if not log(0):
        return RunResult(cfg, records, W, state, time.perf_counter() - start)
    for k in range(1, cfg.steps + 1):
        sample = sample_grad(spec, W, rng)
        t0 = time.perf_counter_ns()
        try:
            W, state = opt.step(W, sample.gradient, state, ocfg)
        except opt.NonFiniteGradientError:
            log(k, aborted=True)
            break
        elapsed_ns += time.perf_counter_ns() - t0
        if cfg.oracle_check and is_mofa:
            g = ocfg.grad_scale * sample.gradient
            tracked = g if tracked is None else ocfg.beta * tracked + g
        if not np.all(np.isfinite(W)):
            log(k, aborted=True)
            break
        if k % cfg.log_every == 0 or k == cfg.steps:
            if not log(k):
                break
    return RunResult(cfg, records, W, state, time.perf_counter() - start)


def run_experiment(cfg: ExperimentConfig) -> list[RunRecord]:
    return execute(cfg).records


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def records_to_csv(records: list[RunRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        row = dataclasses.asdict(rec)
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def memory_accounting(cfg: ExperimentConfig) -> dict:
    """Parameter and optimizer-state scalar counts in the layout of the memory table."""
    m, n = cfg.problem.shape
    r = cfg.optimizer.rank
    state = opt.init_state(cfg.optimizer)
    state_count = opt.state_scalars(state, (m, n), r)
    block = {
        "m": m,
        "n": n,
        "rank": r,
        "parameters": m * n,
        "optimizer_state": state_count,
        "total": m * n + state_count,
    }
    kind = cfg.optimizer.kind
    if kind is opt.Kind.MOFASGD:
        block["formula"] = "mn + mr + nr + r"
        block["transient_buffer"] = opt.buffer_scalars((m, n), r)
    elif kind is opt.Kind.GALORE:
        block["formula"] = "mn + mr + 2nr (m <= n)"
    elif kind is opt.Kind.ADAMW:
        block["formula"] = "3mn"
    elif kind in (opt.Kind.SGD_MOMENTUM, opt.Kind.MUON):
        block["formula"] = "2mn"
    else:
        block["formula"] = "mn"
    return block


def summarize(result: RunResult) -> dict:
    last = result.records[-1]
    n_steps = last.step
    return {
        "config": result.config.to_dict(),
        "steps_completed": n_steps,
        "aborted": result.aborted,
        "initial_loss": result.records[0].loss,
        "final_loss": last.loss,
        "final_grad_fro": last.grad_fro,
        "final_grad_nuc": last.grad_nuc,
        "runtime_s": result.runtime_s,
        "throughput_steps_per_s": n_steps / result.runtime_s if result.runtime_s > 0 else None,
        "memory": memory_accounting(result.config),
    }


def write_outputs(result: RunResult, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "records.csv"
    json_path = out / "summary.json"
    csv_path.write_text(records_to_csv(result.records), newline="")
    json_path.write_text(json.dumps(summarize(result), indent=2, default=str) + "\n")
    return csv_path, json_path
