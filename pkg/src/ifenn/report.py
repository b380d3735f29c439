"""CSV tables and matplotlib (Agg) figures for run directories."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fem import write_csv  # noqa: E402
from .training import MetricReport, TrainReport  # noqa: E402

__all__ = ["write_csv", "loss_curves", "error_histogram", "step_errors", "stability_curves", "bench_chart",
           "metric_rows"]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def loss_curves(report: TrainReport, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(len(report.train_loss))
    ax.semilogy(epochs, report.train_loss, label="train")
    if np.isfinite(report.validation_loss).any():
        ax.semilogy(epochs, report.validation_loss, label="validation")
    if report.best_epoch >= 0:
        ax.axvline(report.best_epoch, color="grey", ls=":", label=f"best epoch {report.best_epoch}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    return _save(fig, path)


def error_histogram(errors: np.ndarray, path, percentile_ids: dict | None = None, ids=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(errors, bins=min(20, max(5, len(errors))), color="tab:blue", alpha=0.8)
    if percentile_ids and ids is not None:
        lookup = dict(zip(np.asarray(ids).tolist(), np.asarray(errors).tolist()))
        for p, cid in percentile_ids.items():
            ax.axvline(lookup[cid], color="k", ls="--", lw=0.8)
            ax.text(lookup[cid], ax.get_ylim()[1] * 0.9, f"p{p}: case {cid}", rotation=90, va="top", fontsize=8)
    ax.set_xlabel("L2 error per load case")
    ax.set_ylabel("cases")
    return _save(fig, path)


def step_errors(report: MetricReport, path, case: int = 0, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = np.arange(1, report.l2_t.shape[1] + 1)
    for i, name in enumerate(report.components):
        ax.semilogy(steps, np.maximum(report.l2_t[case, :, i], 1e-16), marker=".", label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("relative L2 error")
    if title:
        ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def stability_curves(curves: dict[str, tuple[np.ndarray, np.ndarray]], switch_field: int, switch_strain: int,
                     path) -> Path:
    """``curves`` maps a label to (coupled-field error, strain error) per step."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    for label, (z_err, s_err) in curves.items():
        steps = np.arange(1, len(z_err) + 1)
        axes[0].plot(steps, z_err, label=label)
        axes[1].plot(steps, s_err, label=label)
    for ax, what in zip(axes, ("coupled field", "strain trace")):
        ax.axvline(switch_field + 0.5, color="grey", ls=":")
        ax.axvline(switch_strain + 0.5, color="grey", ls="--")
        ax.set_xlabel("step")
        ax.set_ylabel(f"{what} relative L2 error")
        ax.legend()
    return _save(fig, path)


def bench_chart(labels, monolithic_seconds, mechanics_seconds, path, note: str) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(labels))
    ax.bar(x - 0.2, monolithic_seconds, 0.4, label="monolithic")
    ax.bar(x + 0.2, mechanics_seconds, 0.4, label="mechanics only")
    ax.set_xticks(x, labels)
    ax.set_ylabel("seconds per step")
    ax.set_title(note, fontsize=9)
    ax.legend()
    return _save(fig, path)


def metric_rows(report: MetricReport, case_ids):
    """(case, step, component, L2^t) rows followed by per-case and overall summaries."""
    rows = [("step", int(c), int(t), n, float(v)) for c, t, n, v in report.step_rows(case_ids)]
    for i, cid in enumerate(case_ids):
        for j, name in enumerate(report.components):
            rows.append(("case", int(cid), "", name, float(report.l2_lc[i, j])))
    for j, name in enumerate(report.components):
        rows.append(("all", "", "", name, float(report.l2_all[j])))
    return rows
