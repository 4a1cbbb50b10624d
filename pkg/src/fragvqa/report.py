"""Evaluation figures rendered next to the CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import logistic
from .protocol import ProtocolReport

plt.rcParams.update(
    {
        "figure.dpi": 110,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 10,
    }
)


def save_metric_distribution_figure(report: ProtocolReport, path: str | Path) -> None:
    """Boxplots of the per-iteration correlation metrics and RMSE."""
    done = [r for r in report.iterations if not r.failed]
    fig, (ax_corr, ax_err) = plt.subplots(1, 2, figsize=(8, 3.6))
    if done:
        corr = [
            [r.metrics.srcc for r in done],
            [r.metrics.krcc for r in done],
            [r.metrics.plcc for r in done],
        ]
        ax_corr.boxplot(corr, tick_labels=["SRCC", "KRCC", "PLCC"])
        ax_corr.set_ylim(-1.05, 1.05)
        ax_err.boxplot([[r.metrics.rmse for r in done]], tick_labels=["RMSE"])
    ax_corr.set_title(f"correlations over {len(done)} iterations")
    ax_err.set_title("prediction error")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _median_iteration(report: ProtocolReport):
    done = [r for r in report.iterations if not r.failed]
    if not done:
        return None
    med = float(np.median([r.metrics.srcc for r in done]))
    return min(done, key=lambda r: abs(r.metrics.srcc - med))


def save_fit_scatter_figure(report: ProtocolReport, path: str | Path) -> None:
    """Held-out scatter with the fitted logistic curve, median iteration."""
    chosen = _median_iteration(report)
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    if chosen is not None and chosen.test_pred:
        pred = np.asarray(chosen.test_pred)
        truth = np.asarray(chosen.test_truth)
        ax.scatter(pred, truth, s=18, alpha=0.8, label="held-out videos")
        xs = np.linspace(pred.min(), pred.max(), 200)
        ax.plot(xs, logistic(xs, chosen.metrics.betas), "r-", lw=1.2, label="logistic map")
        ax.set_title(
            f"iteration {chosen.iteration}: "
            f"srcc {chosen.metrics.srcc:.3f}, plcc {chosen.metrics.plcc:.3f}"
        )
        ax.legend(loc="best")
    else:
        ax.set_title("no completed iterations")
    ax.set_xlabel("predicted score")
    ax.set_ylabel("label")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
