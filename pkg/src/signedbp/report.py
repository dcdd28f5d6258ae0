"""Figure rendering for CLI reports.

Every plot is written straight to a file with the Agg backend; the same
numbers are always also emitted as CSV/JSON by the callers, so figures are
a convenience view, never the only record.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def render_trace(chain, param_names, path, burn_in: int = 0) -> None:
    """Trace plots plus sign indicator for one chain."""
    k = len(param_names)
    fig, axes = plt.subplots(k + 1, 1, figsize=(8, 2.0 * (k + 1)),
                             sharex=True)
    axes = np.atleast_1d(axes)
    iters = np.arange(len(chain.thetas))
    for i, name in enumerate(param_names):
        axes[i].plot(iters, chain.thetas[:, i], lw=0.4)
        if burn_in:
            axes[i].axvline(burn_in, color="grey", ls="--", lw=0.8)
        axes[i].set_ylabel(name)
    neg = chain.signs < 0
    axes[-1].plot(iters, np.cumsum(neg) / np.maximum(iters + 1, 1), lw=0.8)
    axes[-1].set_ylabel("neg. frac")
    axes[-1].set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_posterior(chain, param_names, path, burn_in: int = 0,
                     oracle=None) -> None:
    """Histograms of the kept draws; optional overlay of an exact density."""
    k = len(param_names)
    fig, axes = plt.subplots(1, k, figsize=(3.2 * k, 3.0), squeeze=False)
    for i, name in enumerate(param_names):
        ax = axes[0, i]
        ax.hist(chain.thetas[burn_in:, i], bins=60, density=True,
                color="steelblue", alpha=0.8)
        if oracle is not None and i == 0:
            grid, dens = oracle
            ax.plot(grid, dens, "k-", lw=1.2, label="exact")
            ax.legend()
        ax.set_xlabel(name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ct_sweep(sweep: np.ndarray, path) -> None:
    """log CT, positivity probability and log-variance against block count."""
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    finite = np.isfinite(sweep["ct"])
    axes[0].plot(sweep["lam"][finite], np.log(sweep["ct"][finite]))
    axes[0].set_ylabel("log CT")
    axes[1].plot(sweep["lam"], sweep["tau"])
    axes[1].set_ylabel("tau")
    axes[2].plot(sweep["lam"], sweep["sigma2"])
    axes[2].set_ylabel("var log|L|")
    axes[2].set_xlabel("blocks")
    if finite.any():
        best = sweep["lam"][finite][np.argmin(sweep["ct"][finite])]
        for ax in axes:
            ax.axvline(best, color="crimson", ls="--", lw=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sphere(data, path) -> None:
    """3-D scatter of spherical observations, coloured by group."""
    fig = plt.figure(figsize=(5, 5))
    ax = fig.add_subplot(111, projection="3d")
    pts = data.points
    if data.groups is not None:
        for g, color in ((1, "tab:green"), (2, "tab:red")):
            mask = data.groups == g
            ax.scatter(*pts[mask].T, s=8, color=color, label=f"group {g}")
        ax.legend()
    else:
        ax.scatter(*pts.T, s=8)
    ax.set_box_aspect((1, 1, 1))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
