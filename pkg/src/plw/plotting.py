"""Optional PNG renderings of the CSV series (``plw run --plot``)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {"PLW": "tab:green", "SD": "tab:red", "LW": "tab:blue", "ME": "tab:orange"}


def plot_histories(results, path, tau_delta=None) -> Path:
    """Residual and error versus k for each method, log scale."""
    fig, (ax_r, ax_e) = plt.subplots(1, 2, figsize=(9, 3.5), constrained_layout=True)
    for res in results:
        h = res.history
        if not h:
            continue
        k = [r.k for r in h]
        color = STYLE.get(res.name)
        ax_r.semilogy(k, [r.residual_norm for r in h], color=color, label=res.name)
        if h[0].error_norm is not None:
            ax_e.semilogy(k, [r.error_norm for r in h], color=color, label=res.name)
    if tau_delta:
        ax_r.axhline(tau_delta, color="0.5", lw=0.8, ls="--", label=r"$\tau\delta$")
    ax_r.set(xlabel="k", ylabel="residual")
    ax_e.set(xlabel="k", ylabel="error")
    ax_r.legend(frameon=False)
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(rows, path) -> Path:
    """Final error at the stopping index versus the noise level."""
    by_method = {}
    for delta, seed, method, _, _, err, _ in rows:
        if err is not None:
            by_method.setdefault((method, seed), []).append((delta, err))
    fig, ax = plt.subplots(figsize=(4.5, 3.5), constrained_layout=True)
    for (method, seed), pts in sorted(by_method.items()):
        pts.sort()
        ax.loglog(*zip(*pts), marker="o", color=STYLE.get(method), alpha=0.7,
                  label=f"{method} (seed {seed})")
    ax.set(xlabel="relative noise", ylabel="error at stop")
    ax.legend(frameon=False, fontsize=7)
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
