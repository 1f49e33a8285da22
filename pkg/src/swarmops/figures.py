"""Figure rendering for maps, learning curves, and method comparisons.

Everything draws through the Agg backend straight to files so reports
can be produced on headless machines.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import Request
from .experiments import MetricsReport
from .segmentation import ServiceMap

_METHOD_COLORS = {
    "mar_ops": "#1f77b4",
    "ops_global": "#ff7f0e",
    "ops_random": "#2ca02c",
    "mappo": "#d62728",
    "squares": "#9467bd",
}


def _color(name: str) -> str:
    return _METHOD_COLORS.get(name, "#7f7f7f")


def render_service_map(smap: ServiceMap, path: str | Path,
                       requests: Sequence[Request] | None = None) -> Path:
    """Depot layout with neighbor edges; requests tinted by owning area."""
    fig, ax = plt.subplots(figsize=(7, 7))
    xs = [p.x for p in smap.depots]
    ys = [p.y for p in smap.depots]
    for a, nbrs in enumerate(smap.neighbor_lists):
        for b in nbrs:
            ax.plot([xs[a], xs[b]], [ys[a], ys[b]], color="0.8", lw=0.8, zorder=1)
    if requests:
        pts = np.array([[r.location.x, r.location.y] for r in requests])
        areas = [smap.area_of(r.location) for r in requests]
        ax.scatter(pts[:, 0], pts[:, 1], c=areas, cmap="tab20", s=8, alpha=0.5, zorder=2)
    ax.scatter(xs, ys, marker="s", s=90, c="black", zorder=3)
    for a, (x, y) in enumerate(zip(xs, ys)):
        ax.annotate(str(a), (x, y), textcoords="offset points", xytext=(4, 4),
                    fontsize=8, color="black")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"service map ({smap.kind}, {smap.num_areas} areas)")
    ax.set_aspect("equal")
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render_learning_curves(curves: dict[str, list[dict]], path: str | Path) -> Path:
    """Reward and delay per training episode, one line per method."""
    fig, (ax_r, ax_d) = plt.subplots(1, 2, figsize=(11, 4))
    for name, rows in sorted(curves.items()):
        if not rows:
            continue
        eps = [row["episode"] for row in rows]
        ax_r.plot(eps, [row["mean_reward"] for row in rows],
                  label=name, color=_color(name), lw=1.2)
        ax_d.plot(eps, [row["avg_delay_hours"] for row in rows],
                  label=name, color=_color(name), lw=1.2)
    ax_r.set_xlabel("episode")
    ax_r.set_ylabel("mean reward")
    ax_d.set_xlabel("episode")
    ax_d.set_ylabel("avg delay [h]")
    ax_r.legend(fontsize=8)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render_method_comparison(reports: dict[str, MetricsReport], path: str | Path) -> Path:
    """Bar panels: energy, delay, unfairness, combined cost with std whiskers."""
    names = sorted(reports)
    panels = [
        ("mean energy [kJ/drone]", [reports[n].mean_energy_kj for n in names],
         [reports[n].std_energy_kj for n in names]),
        ("avg delay [h]", [reports[n].avg_delay_hours for n in names],
         [reports[n].std_delay_hours for n in names]),
        ("delay unfairness", [reports[n].delay_unfairness for n in names],
         [reports[n].std_delay_unfairness for n in names]),
        ("combined cost", [reports[n].combined_cost or 0.0 for n in names],
         [reports[n].std_combined_cost or 0.0 for n in names]),
    ]
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 4))
    for ax, (title, vals, errs) in zip(axes, panels):
        ax.bar(range(len(names)), vals, yerr=errs, capsize=3,
               color=[_color(n) for n in names])
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render_tradeoff(reports: dict[str, MetricsReport], path: str | Path) -> Path:
    """Energy versus delay scatter with per-method std error bars."""
    fig, ax = plt.subplots(figsize=(6, 5))
    for name in sorted(reports):
        r = reports[name]
        ax.errorbar(r.avg_delay_hours, r.mean_energy_kj,
                    xerr=r.std_delay_hours, yerr=r.std_energy_kj,
                    fmt="o", color=_color(name), label=name, capsize=3)
    ax.set_xlabel("avg delay [h]")
    ax.set_ylabel("mean energy [kJ/drone]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render_depot_load(reports: dict[str, MetricsReport], path: str | Path) -> Path:
    """Mean parcel mass dispatched from each start depot, per method."""
    fig, ax = plt.subplots(figsize=(8, 4))
    names = sorted(reports)
    width = 0.8 / max(1, len(names))
    for i, name in enumerate(names):
        loads = reports[name].depot_load_kg
        xs = np.arange(len(loads)) + i * width
        ax.bar(xs, loads, width=width, color=_color(name), label=name)
    ax.set_xlabel("depot")
    ax.set_ylabel("dispatched mass [kg]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
