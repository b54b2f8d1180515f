"""Figures written next to the report table."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.figure import Figure
from matplotlib.ticker import MaxNLocator

from flroute.evaluate import ResultsTable

_META = {"Software": None}  # keep PNG bytes free of version strings


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata=_META)
    return path


def auc_heatmap(table: ResultsTable, path) -> Path:
    """Method x client AUC grid; gaps are left blank."""
    methods = list(table.rows)
    grid = np.array([[np.nan if v is None else v for v in table.rows[m]] for m in methods], dtype=float)
    fig = Figure(figsize=(1.2 + 0.7 * len(table.clients), 1.0 + 0.45 * len(methods)))
    ax = fig.add_subplot()
    im = ax.imshow(np.ma.masked_invalid(grid), cmap="viridis", vmin=0.5, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(table.clients)), [str(c) for c in table.clients])
    ax.set_yticks(range(len(methods)), methods)
    ax.set_xlabel("client")
    for i in range(len(methods)):
        for j in range(len(table.clients)):
            if not np.isnan(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center", fontsize=7,
                        color="white" if grid[i, j] < 0.75 else "black")
    fig.colorbar(im, ax=ax, label="ROC AUC")
    fig.tight_layout()
    return _save(fig, path)


def auc_bars(table: ResultsTable, path) -> Path:
    methods = list(table.rows)
    means = [table.average(m) for m in methods]
    fig = Figure(figsize=(1.5 + 0.8 * len(methods), 3.2))
    ax = fig.add_subplot()
    xs = np.arange(len(methods))
    heights = [0.0 if v is None else v for v in means]
    bars = ax.bar(xs, heights, color=["#bbbbbb" if v is None else "#4c72b0" for v in means])
    for bar, v in zip(bars, means):
        label = "--" if v is None else f"{v:.3f}"
        ax.annotate(label, (bar.get_x() + bar.get_width() / 2, bar.get_height()), ha="center", va="bottom",
                    fontsize=8)
    ax.set_xticks(xs, methods, rotation=30, ha="right")
    ax.set_ylabel("mean ROC AUC")
    ax.set_ylim(0.0, 1.05)
    fig.tight_layout()
    return _save(fig, path)


def loss_curves(curves: Mapping[str, Sequence[float]], path) -> Path:
    """Mean training loss per round for each run."""
    fig = Figure(figsize=(5.5, 3.5))
    ax = fig.add_subplot()
    for name, ys in curves.items():
        ax.plot(range(1, len(ys) + 1), ys, marker="o", markersize=2.5, label=name)
    ax.set_xlabel("round")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_ylabel("mean local loss")
    if curves:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
