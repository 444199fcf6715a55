"""PNG figures for run logs and ablation reports (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .runner import SENTINEL, RunRecord  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes stable across reruns
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_run(records: list[RunRecord], path, title: str = "") -> Path:
    """Loss and gradient norms per step; energy ratio in a second panel when logged."""
    steps = np.array([r.step for r in records])
    ratio = np.array([r.energy_ratio for r in records], dtype=float)
    has_ratio = bool(np.any(ratio != SENTINEL))
    fig, axes = plt.subplots(1, 2 if has_ratio else 1, figsize=(10 if has_ratio else 5.5, 4), squeeze=False)
    ax = axes[0, 0]
    ax.semilogy(steps, [max(r.loss, 1e-300) for r in records], label="loss")
    ax.semilogy(steps, [max(r.grad_nuc, 1e-300) for r in records], label="grad nuclear norm")
    ax.semilogy(steps, [max(r.grad_fro, 1e-300) for r in records], label="grad Frobenius norm", alpha=0.7)
    ax.set_xlabel("step")
    ax.legend()
    ax.set_title(title)
    if has_ratio:
        keep = ratio != SENTINEL
        ax = axes[0, 1]
        ax.plot(steps[keep], ratio[keep])
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("step")
        ax.set_ylabel("top-r energy ratio of first moment")
    return _save(fig, path)


def plot_rank_ablation(report: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name in dict.fromkeys(row["optimizer"] for row in report["rows"]):
        rows = [row for row in report["rows"] if row["optimizer"] == name]
        ax.semilogy([r["rank"] for r in rows], [r["final_loss_median"] for r in rows], "o-", label=name)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("rank r")
    ax.set_ylabel(f"median final loss ({report['seeds']} seeds)")
    ax.legend()
    return _save(fig, path)


def plot_tau_ablation(report: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    rows = report["rows"]
    ax.semilogy([r["tau"] for r in rows], [r["final_loss"] for r in rows], "o-")
    ax.set_xscale("log")
    ax.set_xlabel("resampling period tau")
    ax.set_ylabel("GaLore final loss")
    return _save(fig, path)


def plot_rate_check(report: dict, path) -> Path:
    T = np.asarray(report["horizons"], float)
    metric = np.asarray(report["metric"], float)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.errorbar(T, metric, yerr=report.get("metric_stderr"), fmt="o", label="averaged gradient nuclear norm")
    fit = np.exp(np.polyval(np.polyfit(np.log(T), np.log(metric), 1), np.log(T)))
    ax.plot(T, fit, "-", label=f"fit, slope {report['slope']:.3f}")
    ax.plot(T, metric[0] * np.sqrt(T[0] / T), "--", label="T^-1/2 reference")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("horizon T")
    ax.legend()
    return _save(fig, path)
