"""Report figures. Everything renders off-screen to files."""

from __future__ import annotations

from math import sqrt
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

fig_width_pt = 390.0
inches_per_pt = 1.0 / 72.27
golden_mean = (sqrt(5.0) - 1.0) / 2.0
fig_width = fig_width_pt * inches_per_pt
fig_size = [fig_width, fig_width * golden_mean]

STYLE = {
    "figure.figsize": fig_size,
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "legend.frameon": False,
    "svg.hashsalt": "signmimic",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def moving_average(x, window: int = 5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if len(x) < window or window <= 1:
        return x.copy()
    return np.convolve(x, np.ones(window) / window, mode="valid")


def learning_curves(curves: dict, path, column: str = "reward_mean", window: int = 5) -> Path:
    """One line per run: ``curves`` maps a label to a list of curve rows."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, rows in curves.items():
            steps = np.array([r["step"] for r in rows], dtype=float)
            vals = np.array([r[column] for r in rows], dtype=float)
            ax.plot(steps, vals, alpha=0.35, lw=0.8)
            sm = moving_average(vals, window)
            ax.plot(steps[len(steps) - len(sm):], sm, color=ax.lines[-1].get_color(), label=label)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(column.replace("_", " "))
        if curves:
            ax.legend(loc="best")
        fig.tight_layout()
        return _save(fig, path)


def ceiling_series(reports, path) -> Path:
    """Per-step reward of each ceiling report."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for rep in reports:
            ax.plot(np.arange(rep.steps), rep.series, lw=0.8, label=f"{rep.label} ({rep.cumulative:.0f})")
        ax.set_xlabel("control step")
        ax.set_ylabel("reward")
        ax.set_ylim(top=1.005)
        if reports:
            ax.legend(loc="lower left", ncol=2)
        fig.tight_layout()
        return _save(fig, path)


def term_bars(table: dict, path, ylabel: str = "estimated r_p * r_v") -> Path:
    """Bar chart of one scalar per named configuration."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = list(table)
        vals = [table[n] for n in names]
        ax.bar(range(len(names)), vals, color="0.45")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=35, ha="right")
        ax.set_ylabel(ylabel)
        ax.set_ylim(0, max(1.0, max(vals, default=0) * 1.05))
        fig.tight_layout()
        return _save(fig, path)


def step_response(t, series: dict, path, target: float | None = None) -> Path:
    """Joint trajectories after a step target, one line per label."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, y in series.items():
            ax.plot(t, y, label=label)
        if target is not None:
            ax.axhline(target, color="0.6", ls="--", lw=0.8)
            ax.axhline(0.9 * target, color="0.8", ls=":", lw=0.8)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("angle [rad]")
        ax.legend(loc="lower right")
        fig.tight_layout()
        return _save(fig, path)


def eval_terms(rows, path) -> Path:
    """Sub-reward traces of a single evaluation rollout."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        steps = [r["step"] for r in rows]
        for key in ("r_pb", "r_ph", "r_vb", "r_vh", "r_e", "total"):
            ax.plot(steps, [r[key] for r in rows], lw=0.8 if key != "total" else 1.4, label=key)
        ax.set_xlabel("control step")
        ax.set_ylabel("reward")
        ax.legend(loc="lower left", ncol=3)
        fig.tight_layout()
        return _save(fig, path)
