"""Figure rendering for the command-line report path.

Every renderer takes already-computed rows and writes one PNG next to the
delimited output, using the non-interactive matplotlib backend so commands
work headless.  Figures are a convenience view of the CSV data, never an
additional source of truth.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fileio import MetricsRow, SweepRow

_COLORS = {"cg": "tab:blue", "idw": "tab:orange"}


def _color(method: str) -> str:
    return _COLORS.get(method, "tab:gray")


def save_error_timeseries(path: str | Path, rows: Iterable[MetricsRow]) -> None:
    """Per-slot mean relative error, one line per method."""
    per_method: dict[str, list[tuple[int, float]]] = {}
    for row in rows:
        if row.slot == "all":
            continue
        per_method.setdefault(row.method, []).append((int(row.slot), row.mean_rel_err))
    if not per_method:
        raise ValueError("no per-slot rows to plot")
    fig, ax = plt.subplots(figsize=(8, 4))
    for method in sorted(per_method):
        points = sorted(per_method[method])
        ax.plot(
            [slot for slot, _ in points],
            [err for _, err in points],
            label=method,
            color=_color(method),
        )
    ax.set_xlabel("slot")
    ax.set_ylabel("mean relative error")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_sweep_curve(path: str | Path, rows: Iterable[SweepRow]) -> None:
    """Error against a swept parameter, one line per method."""
    rows = list(rows)
    if not rows:
        raise ValueError("no sweep rows to plot")
    parameters = sorted({row.parameter for row in rows})
    fig, axes = plt.subplots(
        1, len(parameters), figsize=(5 * len(parameters), 4), squeeze=False
    )
    for ax, parameter in zip(axes[0], parameters):
        for method in sorted({r.method for r in rows if r.parameter == parameter}):
            points = sorted(
                (r.value, r.mean_rel_err)
                for r in rows
                if r.parameter == parameter and r.method == method
            )
            ax.plot(
                [v for v, _ in points],
                [e for _, e in points],
                marker="o",
                label=method,
                color=_color(method),
            )
        ax.set_xlabel(parameter)
        ax.set_ylabel("mean relative error")
        ax.legend()
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_fitness_history(path: str | Path, history: Iterable) -> None:
    """Per-generation best and mean fitness of one tuning run."""
    history = list(history)
    if not history:
        raise ValueError("no generations to plot")
    generations = [s.generation for s in history]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(generations, [s.best_ever for s in history], label="best so far",
            color="tab:blue")
    ax.plot(generations, [s.mean for s in history], label="population mean",
            color="tab:orange", alpha=0.7)
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_degree_histogram(path: str | Path, degrees: Sequence[float]) -> None:
    """Distribution of node degrees for one constructed graph."""
    degrees = np.asarray(degrees, dtype=float)
    if degrees.size == 0:
        raise ValueError("no degrees to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    lo, hi = float(degrees.min()), float(degrees.max())
    if hi - lo < 1e-9:
        # All degrees equal (saturated similarity curve); pad the range so
        # the histogram still has finite-width bins.
        lo, hi = lo - 0.5, hi + 0.5
    ax.hist(degrees, bins=min(30, max(5, degrees.size // 4)), range=(lo, hi),
            color="tab:blue", edgecolor="white")
    ax.set_xlabel("node degree")
    ax.set_ylabel("count")
    ax.grid(True, alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
