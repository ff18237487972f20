"""Figure rendering for the CLI report paths.

Every command that produces delimited output (metrics JSON/CSV, loss CSVs)
also renders a matplotlib figure next to it: loss curves for the two training
stages, a metric summary bar chart, and a distance-matrix heatmap for
evaluation runs.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_loss_curve", "save_metrics_report", "save_distance_matrix_csv"]


def save_loss_curve(history, path, title: str = "training loss") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, len(history) + 1), history, lw=1.0)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    # delimited twin of the figure
    csv_path = path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(history, start=1):
            w.writerow([i, f"{v:.8g}"])
    return path


def save_metrics_report(report, out_dir) -> list[Path]:
    """Bar chart of the six metrics plus a heatmap per distance matrix."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    d = report.to_dict(scaled=False)
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    axes[0].bar(["CD", "EMD"], [d["mmd_cd"], d["mmd_emd"]], color=["#4878b0", "#e1812c"])
    axes[0].set_title("MMD (lower is better)")
    axes[1].bar(["CD", "EMD"], [d["cov_cd"], d["cov_emd"]], color=["#4878b0", "#e1812c"])
    axes[1].set_ylim(0, 100)
    axes[1].set_title("COV % (higher is better)")
    axes[2].bar(["CD", "EMD"], [d["nna_cd"], d["nna_emd"]], color=["#4878b0", "#e1812c"])
    axes[2].axhline(50, color="k", ls="--", lw=0.8)
    axes[2].set_ylim(0, 100)
    axes[2].set_title("1-NNA % (50 is ideal)")
    fig.tight_layout()
    p = out_dir / "metrics.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    for name, mat in report.distance_matrices.items():
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(mat, aspect="auto", cmap="viridis")
        ax.set_xlabel("reference shape")
        ax.set_ylabel("generated shape")
        ax.set_title(f"pairwise {name.upper()}")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        p = out_dir / f"distances_{name}.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)
    return written


def save_distance_matrix_csv(matrix: np.ndarray, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in matrix:
            w.writerow([f"{x:.9g}" for x in row])
    return path
