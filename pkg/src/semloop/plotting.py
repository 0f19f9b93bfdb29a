"""Figures written to image files: PR curves, trajectories, training history."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.fontsize": 9,
    "savefig.dpi": 120,
}


def _save(fig, path, meta=None) -> Path:
    """Save and close; ``meta`` strings go into the image's text metadata (PNG)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Software": "semloop"}
    if meta:
        metadata["Description"] = " ".join(f"{k}={v}" for k, v in meta.items())
    fig.savefig(path, bbox_inches="tight", metadata=metadata if path.suffix.lower() == ".png" else None)
    plt.close(fig)
    return path


def plot_pr_curves(curves: dict, path, title: str = "", meta=None) -> Path:
    """``curves`` maps a legend label to ``(threshold, precision, recall)`` rows."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, curve in curves.items():
            arr = np.array(curve, dtype=float)
            ax.plot(arr[:, 2], arr[:, 1], label=label, lw=1.5)
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        if title:
            ax.set_title(title)
        if curves:
            ax.legend(loc="lower left")
        return _save(fig, path, meta)


def plot_trajectories(trajs: dict, path, loops=(), title: str = "", meta=None) -> Path:
    """Top-down view of each trajectory; ``loops`` are (i, j) pairs drawn on the first one."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        first = None
        for label, positions in trajs.items():
            xy = np.asarray(positions, dtype=float)[:, :2]
            ax.plot(xy[:, 0], xy[:, 1], label=label, lw=1.2)
            if first is None:
                first = xy
        for i, j in loops:
            ax.plot(first[[i, j], 0], first[[i, j], 1], "k--", lw=0.8)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        if title:
            ax.set_title(title)
        ax.legend(loc="best")
        return _save(fig, path, meta)


def plot_history(history: list, path, meta=None) -> Path:
    """Loss and F1 per epoch from a training history."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ep = [r["epoch"] for r in history]
        ax.plot(ep, [r["loss"] for r in history], label="loss", color="tab:red")
        ax.set_xlabel("epoch")
        ax.set_ylabel("BCE loss")
        ax2 = ax.twinx()
        for key, color in (("train_f1", "tab:blue"), ("val_f1", "tab:green")):
            if any(key in r for r in history):
                ax2.plot(ep, [r.get(key, np.nan) for r in history], label=key, color=color)
        ax2.set_ylim(0, 1.02)
        ax2.set_ylabel("max F1")
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], loc="center right")
        return _save(fig, path, meta)


def plot_bars(values: dict, path, ylabel: str = "max F1", meta=None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = list(values)
        ax.bar(range(len(names)), [values[n] for n in names], color="tab:blue")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20)
        ax.set_ylim(0, 1.02)
        ax.set_ylabel(ylabel)
        return _save(fig, path, meta)
