"""Figure rendering for the report paths; every CLI report can drop a
matplotlib figure next to its CSV. All renderers write to a file path and
never open a window."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def save_pseudo_spectrum(bearings_deg, values, path, label: str = "") -> None:
    """Full-bearing normalized pseudo-spectrum as a line plot."""
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    ax.plot(bearings_deg, values, lw=1.2, label=label or None)
    ax.set_xlabel("bearing (deg)")
    ax.set_ylabel("normalized power")
    ax.set_xlim(0, 360)
    ax.set_ylim(0, 1.05)
    ax.grid(alpha=0.3)
    if label:
        ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_distance_azimuth(damap, path) -> None:
    """Polar bearing x range score map with detections marked."""
    fig = plt.figure(figsize=(5.2, 5.2))
    ax = fig.add_subplot(projection="polar")
    bearings = damap.bearings_deg
    b_step = bearings[1] - bearings[0] if len(bearings) > 1 else 360.0
    theta_edges = np.deg2rad(np.append(bearings, bearings[-1] + b_step) - b_step / 2)
    ranges = damap.ranges_m
    r_step = ranges[1] - ranges[0] if len(ranges) > 1 else 1.0
    r_edges = np.append(ranges, ranges[-1] + r_step)
    mesh = ax.pcolormesh(theta_edges, r_edges, damap.scores.T, shading="flat",
                         cmap="viridis")
    for bearing, rng, _ in damap.detections:
        ax.plot(np.deg2rad(bearing), rng, "r^", ms=9, mfc="none", mew=1.5)
    ax.set_theta_zero_location("E")
    fig.colorbar(mesh, ax=ax, shrink=0.75, label="score")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_rows(rows: list[dict], x_field: str, path) -> None:
    """Metric columns of an experiment sweep against the swept condition."""
    metric_fields = [k for k, v in rows[0].items()
                     if k != x_field and isinstance(v, float)]
    labels = [str(r[x_field]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    x = np.arange(len(rows))
    for name in metric_fields:
        ax.plot(x, [r[name] for r in rows], marker="o", label=name)
    ax.set_xticks(x, labels)
    ax.set_xlabel(x_field)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_history(rows: list[dict], path) -> None:
    """Train loss and validation metric per epoch."""
    epochs = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    ax.plot(epochs, [r["train_loss"] for r in rows], marker="o", label="train loss")
    ax.plot(epochs, [r["val_metric"] for r in rows], marker="s", label="val metric")
    ax.set_xlabel("epoch")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
