"""Optional SVG figures for experiment outputs.

SVG output is made reproducible by fixing the hash salt and dropping the
date metadata, so reruns produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "trsb",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "legend.frameon": False,
}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_trajectory(path: Path, times: np.ndarray, occupations: np.ndarray, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        for k in range(occupations.shape[1]):
            ax.plot(times * 1e3, occupations[:, k], marker="o", ms=2.5, label=f"site {k + 1}")
        ax.set_xlabel("time (ms)")
        ax.set_ylabel("occupation")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(title)
        ax.legend(ncol=min(4, occupations.shape[1]), loc="upper right")
        return _save(fig, path)


def plot_sweep(path: Path, data: np.ndarray) -> Path:
    """``data`` columns: phi, energy, energy_err, overlap, current, current_err."""
    phi = data[:, 0]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, figsize=(4.5, 6.0), sharex=True)
        axes[0].errorbar(phi, data[:, 1], yerr=2 * data[:, 2], fmt="o-", ms=3)
        axes[0].set_ylabel("energy")
        axes[1].plot(phi, data[:, 3], "o-", ms=3)
        axes[1].set_ylabel("ground-state overlap")
        axes[1].set_ylim(0, 1.05)
        axes[2].errorbar(phi, data[:, 4], yerr=2 * data[:, 5], fmt="o-", ms=3)
        axes[2].axhline(0, color="0.6", lw=0.8)
        axes[2].set_ylabel("current")
        axes[2].set_xlabel("flux")
        return _save(fig, path)


def plot_surface(path: Path, axes: Mapping[str, np.ndarray], values: np.ndarray,
                 estimate: Mapping[str, float]) -> Path:
    names = list(axes)
    rel = values - values.max()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        if len(names) == 1:
            ax.plot(axes[names[0]], rel, "o-", ms=3)
            ax.axvline(estimate[names[0]], color="C3", lw=0.8)
            ax.set_xlabel(names[0])
            ax.set_ylabel("log-likelihood (rel.)")
        else:
            x, y = axes[names[0]], axes[names[1]]
            cs = ax.contourf(x, y, np.maximum(rel, -200).T, levels=20, cmap="viridis")
            fig.colorbar(cs, ax=ax, label="log-likelihood (rel.)")
            ax.plot(estimate[names[0]], estimate[names[1]], "r+", ms=10)
            ax.set_xlabel(names[0])
            ax.set_ylabel(names[1])
        return _save(fig, path)
