"""Figures for solver traces, qPN fidelity and benchmark sweeps.

Figures are drawn on an Agg canvas created per call, so nothing touches the
global matplotlib backend.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure


def _save(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.tight_layout()
    fig.savefig(str(path), dpi=120)


def plot_bound_evolution(trace: np.ndarray, path) -> None:
    """Upper and lower bounds and the unexplored volume fraction against time."""
    trace = np.asarray(trace, dtype=float).reshape(-1, 5)
    fig = Figure(figsize=(7, 4.5))
    ax = fig.add_subplot(2, 1, 1)
    t = trace[:, 0]
    ax.plot(t, trace[:, 1], label="upper bound d*")
    lo = np.where(np.isfinite(trace[:, 2]), trace[:, 2], np.nan)
    ax.plot(t, lo, label="lower bound")
    ax.set_ylabel("objective")
    ax.legend(loc="best")
    ax2 = fig.add_subplot(2, 1, 2, sharex=ax)
    frac = np.clip(trace[:, 3], 1e-300, None)
    ax2.semilogy(t, frac)
    ax2.set_ylabel("unexplored volume fraction")
    ax2.set_xlabel("time [s]")
    _save(fig, path)


def plot_mae_curve(rho: Sequence[float], mae: Sequence[float], path) -> None:
    """Mean absolute error between the qPN approximation and the PN density."""
    fig = Figure(figsize=(5.5, 3.5))
    ax = fig.add_subplot(1, 1, 1)
    ax.plot(rho, mae, marker="o", ms=3)
    ax.set_xlabel("rho = d / sigma")
    ax.set_ylabel("mean absolute error")
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def plot_bench(parameter: str, values: Sequence[float], reports: Sequence, path) -> None:
    """Success rate, median errors and runtime quartiles over a parameter sweep.

    With a single setting the per-trial errors are drawn as a scatter instead.
    """
    fig = Figure(figsize=(10, 3.5))
    if len(reports) == 1:
        r = reports[0]
        ax = fig.add_subplot(1, 2, 1)
        rot = np.degrees([t.rotation_error for t in r.trials])
        rel = 100.0 * np.array([t.relative_translation_error for t in r.trials])
        ok = np.array([t.success for t in r.trials])
        ax.scatter(rot[ok], rel[ok], s=12, label="success")
        ax.scatter(rot[~ok], rel[~ok], s=12, marker="x", label="failure")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("rotation error [deg]")
        ax.set_ylabel("relative translation error [%]")
        ax.legend(loc="best")
        ax.set_title(f"success rate {r.success_rate:.2f}")
        ax2 = fig.add_subplot(1, 2, 2)
        ax2.hist([t.runtime for t in r.trials], bins=min(20, max(3, len(r.trials))))
        ax2.set_xlabel("runtime [s]")
        ax2.set_ylabel("trials")
        _save(fig, path)
        return
    x = np.asarray(values, dtype=float)
    panels = [
        ("success rate", [r.success_rate for r in reports], None),
        ("rotation error [deg]", [np.degrees(r.rotation_error_q) for r in reports], "log"),
        ("relative translation error [%]", [100.0 * np.array(r.relative_translation_error_q) for r in reports], "log"),
        ("runtime [s]", [r.runtime_q for r in reports], None),
    ]
    for k, (label, ys, scale) in enumerate(panels):
        ax = fig.add_subplot(1, 4, k + 1)
        ys = np.asarray(ys, dtype=float)
        if ys.ndim == 1:
            ax.plot(x, ys, marker="o")
            ax.set_ylim(-0.05, 1.05)
        else:
            ax.plot(x, ys[:, 1], marker="o", label="median")
            ax.fill_between(x, ys[:, 0], ys[:, 2], alpha=0.25, label="Q1-Q3")
        if scale:
            ax.set_yscale(scale)
        ax.set_xlabel(parameter)
        ax.set_ylabel(label)
    _save(fig, path)
