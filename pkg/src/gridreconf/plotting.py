"""Static figures rendered next to the CSV outputs (Agg backend, no display)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

CURVE_PANELS = (("loss", "training loss", True), ("top_err", "TopErr", False),
                ("ineq_mean", "mean inequality violation", True), ("ineq_count", "violations above eps", False))


def _series(rows, key):
    vals = np.array([float(r[key]) if r.get(key, "") not in ("", None) else np.nan for r in rows])
    return vals


def plot_curves(curves: list[dict], path) -> Path | None:
    """One panel per tracked quantity, one line per (variant, member)."""
    if not curves:
        return None
    path = Path(path)
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    groups: dict[tuple, list[dict]] = {}
    for r in curves:
        groups.setdefault((r.get("variant", ""), int(r.get("member", 0))), []).append(r)
    for ax, (key, title, log) in zip(axes.ravel(), CURVE_PANELS):
        for (variant, member), rows in sorted(groups.items()):
            y = _series(rows, key)
            if np.all(np.isnan(y)):
                continue
            ax.plot(_series(rows, "epoch"), y, lw=1, label=f"{variant}#{member}")
        if log and ax.has_data():
            ax.set_yscale("symlog", linthresh=1e-6)
        ax.set_title(title)
        ax.set_xlabel("epoch")
    handles, labels = axes[0, 0].get_legend_handles_labels()
    if handles:
        fig.legend(handles, labels, loc="lower center", ncol=min(len(labels), 6), fontsize="small")
    fig.tight_layout(rect=(0, 0.06, 1, 1))
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_report(rows: list[dict], path) -> Path | None:
    """Bar charts of losses, undervoltage counts and average voltage per regime."""
    if not rows:
        return None
    path = Path(path)
    names = [r["regime"] for r in rows]
    panels = (("total_losses_kWh", "line losses [kWh]"), ("undervoltage_count", "node-steps below 0.95 pu"),
              ("avg_voltage_pu", "average voltage [pu]"))
    fig, axes = plt.subplots(1, len(panels), figsize=(11, 3.5))
    for ax, (key, title) in zip(axes, panels):
        ax.bar(names, [float(r[key]) for r in rows], color="0.45")
        ax.set_title(title)
    axes[2].set_ylim(min(float(r["avg_voltage_pu"]) for r in rows) - 0.01, 1.0)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
