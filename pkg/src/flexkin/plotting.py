"""Report figures, rendered off-screen to PNG files."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_perturbation(rows, path):
    """Baseline vs model MPJPE over the perturbation level."""
    sig = [100 * float(r["sigma_frac"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(sig, [float(r["baseline_mpjpe"]) for r in rows], "o-", label="DLT triangulation (perturbed cameras)")
    ax.plot(sig, [float(r["flex_mpjpe"]) for r in rows], "s--", label="camera-free model")
    ax.set_xlabel("camera parameter noise (% of value)")
    ax.set_ylabel("MPJPE (mm)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_views(rows, path):
    """Aggregate MPJPE against the number of input views."""
    rows = sorted(rows, key=lambda r: int(r["K"]))
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot([int(r["K"]) for r in rows], [float(r["mpjpe_mm"]) for r in rows], "o-")
    ax.set_xlabel("views")
    ax.set_ylabel("MPJPE (mm)")
    ax.set_xticks([int(r["K"]) for r in rows])
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_root_trajectory(pred_root, gt_root, scale, path):
    """Top-down (x, z) view of the scaled predicted and true root paths of one camera."""
    pred = scale * np.asarray(pred_root)
    gt = np.asarray(gt_root)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.plot(gt[:, 0], gt[:, 2], "-", label="ground truth")
    ax.plot(pred[:, 0], pred[:, 2], "--", label=f"prediction x{scale:.3f}")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("depth (m)")
    ax.axis("equal")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_loss_curve(log_path, path, window=10):
    with open(log_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    if rows:
        step = np.array([int(r["step"]) for r in rows])
        for key in ("total", "position", "discriminator"):
            y = np.array([float(r[key]) for r in rows])
            if len(y) >= window:
                y = np.convolve(y, np.ones(window) / window, mode="valid")
                x = step[window - 1:]
            else:
                x = step
            ax.plot(x, y, label=key)
        ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel(f"loss (moving mean, {window} steps)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)
