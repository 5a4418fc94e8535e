"""Figure rendering for evaluation reports.

Writes static PNG files next to the textual/delimited report outputs.
Uses the Agg backend so it works headless.
"""

from __future__ import annotations

import os
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport, Metric

_BAR_COLORS = {"TI": "#4878a8", "TC": "#e49444", "EI": "#6a9f58"}


def _bar_groups(ax, labels, series, title, ylabel):
    x = np.arange(len(labels))
    n = len(series)
    width = 0.8 / n
    for i, (name, values, color) in enumerate(series):
        ax.bar(x + (i - (n - 1) / 2) * width, values, width, label=name, color=color)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylim(0, 100)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    ax.legend()


def save_report_figures(
    report: EvalReport,
    out_dir: Union[str, os.PathLike],
    stem: str = "report",
) -> list[str]:
    """Render the report's F1 and precision/recall charts; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    labels = list(report.datasets) + ["Average"]

    def column(metric: Metric, attr: str) -> list[float]:
        cells = [report.datasets[n][metric] for n in report.datasets]
        cells.append(report.average[metric])
        return [100 * getattr(c, attr) for c in cells]

    paths = []

    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(labels)), 4.0))
    _bar_groups(
        ax,
        labels,
        [(m.value, column(m, "f1"), _BAR_COLORS[m.value]) for m in Metric],
        title=f"F1 by dataset ({report.runs} run{'s' if report.runs != 1 else ''})",
        ylabel="F1 (%)",
    )
    fig.tight_layout()
    path = os.path.join(out_dir, f"{stem}_f1.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    paths.append(path)

    fig, axes = plt.subplots(1, len(Metric), figsize=(4.0 * len(Metric), 4.0), sharey=True)
    for ax, metric in zip(axes, Metric):
        _bar_groups(
            ax,
            labels,
            [
                ("precision", column(metric, "precision"), "#8a8a8a"),
                ("recall", column(metric, "recall"), _BAR_COLORS[metric.value]),
            ],
            title=metric.value,
            ylabel="score (%)",
        )
    fig.tight_layout()
    path = os.path.join(out_dir, f"{stem}_precision_recall.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    paths.append(path)

    return paths
