"""Report figures: training curves, top-down trajectories, benchmark bars.

All functions render straight to files with the non-interactive Agg
backend; nothing here opens a window.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .grids import SceneTimeline, grid_at, project_2d
from .skeleton import PELVIS


def plot_loss_curves(history: list[dict], path) -> None:
    """Per-epoch loss components on a log scale."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("total", "motion", "traj", "conf"):
        ax.plot(epochs, [h[key] for h in history], label=key)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_topdown(
    motion: np.ndarray,
    timeline: SceneTimeline,
    path,
    reference: np.ndarray | None = None,
    goal=None,
) -> None:
    """X-Z view: blocked columns of first and last scene states plus the
    root trajectory (and optionally a reference trajectory and the goal)."""
    motion = np.asarray(motion, dtype=np.float64)
    root = motion[:, PELVIS, :]
    first = project_2d(grid_at(timeline, 0))
    last_frame = timeline.activation_frames[-1]
    last = project_2d(grid_at(timeline, last_frame))
    spec = first.spec
    extent = (
        spec.origin[0],
        spec.origin[0] + spec.dims[0] * spec.cell_size,
        spec.origin[1],
        spec.origin[1] + spec.dims[1] * spec.cell_size,
    )
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(
        first.cells.T, origin="lower", extent=extent, cmap="Greys", alpha=0.35
    )
    if last is not first:
        ax.imshow(
            last.cells.T, origin="lower", extent=extent, cmap="Reds", alpha=0.25
        )
    if reference is not None:
        reference = np.asarray(reference, dtype=np.float64)
        ax.plot(reference[:, 0], reference[:, 2], "g--", lw=1.2, label="oracle")
    ax.plot(root[:, 0], root[:, 2], "b-", lw=1.5, label="generated")
    ax.plot(root[0, 0], root[0, 2], "bo", ms=6)
    if goal is not None:
        ax.plot(goal[0], goal[2], "r*", ms=12, label="goal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_aspect("equal")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_benchmark(results: dict, path) -> None:
    """Grouped bars of the aggregate metrics for every variant."""
    keys = ("traj_err", "goal_err", "pene_rate", "foot_skating")
    variants = list(results)
    x = np.arange(len(keys))
    width = 0.8 / max(len(variants), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, variant in enumerate(variants):
        agg = results[variant]["aggregate"]
        vals = [agg[k] for k in keys]
        ax.bar(x + i * width, vals, width, label=variant)
    ax.set_xticks(x + width * (len(variants) - 1) / 2)
    ax.set_xticklabels(keys)
    ax.set_ylabel("mean over scenarios")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
