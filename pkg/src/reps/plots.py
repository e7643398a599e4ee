"""Figure rendering for the experiment harness (file output only)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_metric_vs_nfe", "plot_ablation", "plot_grid_posterior"]

_LABELS = {"psnr": "PSNR [dB]", "post_mean_err": "posterior-mean error",
           "tv": "TV distance to oracle"}


def plot_metric_vs_nfe(agg_rows, metric: str, path):
    """Line plot of a seed-averaged metric against NFE, one line per method.

    agg_rows holds (method, nfe, value, n_seeds) tuples.
    """
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    methods = sorted({m for m, *_ in agg_rows})
    for m in methods:
        pts = sorted((nfe, v) for mm, nfe, v, _ in agg_rows if mm == m)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=m)
    ax.set_xscale("log")
    ax.set_xlabel("NFE")
    ax.set_ylabel(_LABELS.get(metric, metric))
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_ablation(rows, path):
    """Metric against ODE steps per restart leg at a fixed budget."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    by_steps = {}
    for steps, rec in rows:
        if rec.report is None:
            continue
        val = rec.report.posterior_mean_err
        if val is None:
            val = rec.report.mse
        if val is not None:
            by_steps.setdefault(steps, []).append(val)
    steps = sorted(by_steps)
    ax.plot(steps, [np.mean(by_steps[s]) for s in steps], marker="o")
    ax.set_xscale("log")
    ax.set_xlabel("ODE steps per restart leg")
    ax.set_ylabel("error (seed mean)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_grid_posterior(oracle, samples, path, truth=None):
    """Heatmap of a 2-d grid-oracle table with sample overlay."""
    if oracle.dim != 2:
        raise ValueError("posterior heatmap needs a 2-d oracle")
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    e0, e1 = oracle.edges
    ax.imshow(oracle.table.T, origin="lower", aspect="auto",
              extent=(e0[0], e0[-1], e1[0], e1[-1]), cmap="viridis")
    if samples is not None:
        s = np.atleast_2d(samples)
        ax.plot(s[:, 0], s[:, 1], ".", ms=1.5, color="white", alpha=0.35)
    if truth is not None:
        ax.plot(truth[0], truth[1], "r*", ms=12)
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
