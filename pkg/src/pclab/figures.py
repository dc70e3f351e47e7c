"""Figure rendering for training runs and diagnostic reports.

Every function takes already-computed data and writes a PNG next to the
delimited output; nothing here influences the numbers.  The Agg backend is
forced so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_training_curves(records, path, title="training run") -> Path:
    """Loss (and accuracy, when present) against epochs."""
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(epochs, [r.train_loss for r in records], "o-", label="train loss")
    ax.plot(epochs, [r.test_loss for r in records], "s-", label="test loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    accs = [r.test_accuracy for r in records]
    if any(a is not None for a in accs):
        ax2 = ax.twinx()
        ax2.plot(epochs, [a if a is not None else np.nan for a in accs],
                 "^--", color="tab:green", label="test accuracy")
        ax2.set_ylabel("accuracy")
        ax2.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.legend(loc="best")
    return _finish(fig, path)


def save_error_trace(trace, path, title=None) -> Path:
    """Mean squared local error per layer across inference iterations."""
    table = np.asarray(trace.table)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    t = np.arange(table.shape[0])
    for col in range(table.shape[1]):
        ax.plot(t, table[:, col], "o-", label=f"layer {col + 1}")
    ax.set_xlabel("inference iteration")
    ax.set_ylabel("mean squared error")
    ax.set_yscale("symlog", linthresh=1e-12)
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title or f"{trace.schedule} inference error propagation")
    return _finish(fig, path)


def save_prox_trace(traces, path, title="proximal objective during inference") -> Path:
    """One curve per labelled trace: objective value per inference iteration."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, trace in traces.items():
        ax.plot(range(len(trace.values)), trace.values, "o-", label=label, markersize=3)
    ax.set_xlabel("inference iteration")
    ax.set_ylabel("proximal objective")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    return _finish(fig, path)


def save_update_magnitudes(per_matrix, path, labels=None, title="mean update magnitude") -> Path:
    """Bar chart of per-matrix mean absolute updates, one group per run."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    per_matrix = {k: np.asarray(v) for k, v in per_matrix.items()}
    n_runs = len(per_matrix)
    width = 0.8 / max(n_runs, 1)
    for i, (label, values) in enumerate(per_matrix.items()):
        xs = np.arange(len(values)) + i * width
        ax.bar(xs, values, width=width, label=label)
    any_values = next(iter(per_matrix.values()))
    ax.set_xticks(np.arange(len(any_values)) + 0.4 - width / 2)
    ax.set_xticklabels(labels or [f"W{l}" for l in range(len(any_values))])
    ax.set_ylabel("mean |update|")
    ax.set_yscale("log")
    ax.grid(alpha=0.3, axis="y")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    return _finish(fig, path)


def save_beta_scaling(betas, errors, path, title="implicit-vs-Newton discrepancy") -> Path:
    """Log-log plot of per-unit-rate discrepancy against the global rate."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.loglog(betas, errors, "o-")
    ax.set_xlabel("global rate")
    ax.set_ylabel("discrepancy / rate")
    ax.grid(alpha=0.3, which="both")
    ax.set_title(title)
    return _finish(fig, path)


def save_alignment_report(reports, path, title="energy vs proximal gradient alignment") -> Path:
    """Per-layer ratio spread from alignment checks."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    layers = [r.layer for r in reports]
    spreads = [max(r.spread, 1e-18) for r in reports]
    ax.bar(layers, spreads)
    ax.set_xlabel("hidden layer")
    ax.set_ylabel("relative ratio spread")
    ax.set_yscale("log")
    ax.grid(alpha=0.3, axis="y")
    ax.set_title(title)
    ax.set_xticks(layers)
    return _finish(fig, path)
