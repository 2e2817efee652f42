"""Matplotlib figures written next to the text outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .archive import GridArchive  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_metrics(rows: Sequence[dict], path) -> Path:
    """QD score, coverage and best fitness against iteration."""
    it = [r["iteration"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    for ax, key in zip(axes, ("qd_score", "coverage", "best_f")):
        ax.plot(it, [r[key] for r in rows], lw=1.5)
        ax.set_xlabel("iteration")
        ax.set_title(key)
        ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_archive(archive: GridArchive, path) -> Path:
    """Heatmap of elite fitness for 2-D archives, a bar plot for 1-D, else a histogram."""
    c = archive.config
    fig, ax = plt.subplots(figsize=(5, 4.2))
    if c.k == 2:
        grid = np.full(c.shape, np.nan)
        for cell, occ in archive.occupants.items():
            grid[cell] = occ.fitness
        im = ax.imshow(grid.T, origin="lower", cmap="viridis",
                       extent=(c.lower[0], c.upper[0], c.lower[1], c.upper[1]))
        fig.colorbar(im, ax=ax, label="fitness")
        ax.set_xlabel("descriptor 1")
        ax.set_ylabel("descriptor 2")
    elif c.k == 1:
        row = np.zeros(c.cells_per_dim)
        for cell, occ in archive.occupants.items():
            row[cell[0]] = occ.fitness
        ax.bar(np.arange(c.cells_per_dim), row)
        ax.set_xlabel("cell")
        ax.set_ylabel("fitness")
    else:
        ax.hist(archive.fitness_values(), bins=20)
        ax.set_xlabel("elite fitness")
    ax.set_title(f"{len(archive)} elites, coverage {archive.coverage():.2f}")
    return _save(fig, path)


def plot_adaptation(report, path) -> Path:
    """Best-policy curve and success counts over the knob grid."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].plot(report.grid, report.best, marker="o")
    axes[0].set_xlabel(f"{report.knob} scale")
    axes[0].set_ylabel("best mean return")
    axes[0].set_title(f"AUC {report.auc:.2f}")
    for p, counts in report.success.items():
        axes[1].plot(report.grid, counts, marker="o", label=f"p={p:g}")
    axes[1].set_xlabel(f"{report.knob} scale")
    axes[1].set_ylabel("successful policies")
    axes[1].legend()
    for ax in axes:
        ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_mmd_errors(rows, path) -> Path:
    """Mean estimation error of the embedding distance against D, one line per n."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    Ds = sorted({r.D for r in rows})
    for n in sorted({r.n for r in rows}):
        means = [np.mean([r.psi_error for r in rows if r.D == D and r.n == n]) for D in Ds]
        ax.plot(Ds, means, marker="o", label=f"n={n}")
    ax.set_xscale("log")
    ax.set_xlabel("feature dimension D")
    ax.set_ylabel("mean |embedding distance - MMD|")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_ablation(rows: Sequence[dict], axis: str, metric: str, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot([str(r["value"]) for r in rows], [r[metric] for r in rows], marker="o")
    ax.set_xlabel(axis)
    ax.set_ylabel(metric)
    ax.grid(alpha=0.3)
    return _save(fig, path)
