"""Static PNG figures for the CSV exports (Agg backend, no display needed)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
})


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated renders identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_trajectories(rows, path):
    """True vs predicted positions of the first run, one panel per domain."""
    first = (rows[0]["cell"], rows[0]["seed"])
    rows = [r for r in rows if (r["cell"], r["seed"]) == first]
    domains = list(dict.fromkeys(r["domain"] for r in rows))
    fig, axes = plt.subplots(1, len(domains), figsize=(3.2 * len(domains), 3.4), squeeze=False)
    for ax, dom in zip(axes[0], domains):
        rs = sorted((r for r in rows if r["domain"] == dom), key=lambda r: r["sample_id"])
        t = np.array([(r["true_x"], r["true_y"]) for r in rs])
        p = np.array([(r["pred_x"], r["pred_y"]) for r in rs])
        e = np.array([r["error_m"] for r in rs])
        ax.plot(t[:, 0], t[:, 1], ".", color="0.6", ms=2, label="reference")
        sc = ax.scatter(p[:, 0], p[:, 1], c=e, s=3, cmap="viridis", label="predicted")
        ax.set_title(f"{dom}  MAE {e.mean():.2f} m")
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        fig.colorbar(sc, ax=ax, shrink=0.7, label="error [m]")
    axes[0][0].legend(loc="upper right", markerscale=3)
    fig.suptitle(f"{first[0]} (seed {first[1]})")
    return _save(fig, path)


def plot_cdf(rows, path):
    keys = list(dict.fromkeys((r["cell"], r["domain"]) for r in rows))
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for cell, dom in keys:
        rs = [r for r in rows if r["cell"] == cell and r["domain"] == dom]
        ax.step([r["error_m"] for r in rs], [r["quantile"] for r in rs], where="post",
                lw=1.2, label=f"{cell} / {dom}")
    ax.set_xlabel("positioning error [m]")
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1.0)
    if len(keys) <= 12:
        ax.legend(fontsize=6)
    return _save(fig, path)


def plot_table(rows, path):
    """Final-stage MAE per configuration and test domain, with seed std as error bars."""
    last = max(r["stage"] for r in rows)
    rows = [r for r in rows if r["stage"] == last]
    labels = list(dict.fromkeys(f"{r['method']} N={r['n']} {r['strategy']}" for r in rows))
    domains = list(dict.fromkeys(r["test_domain"] for r in rows))
    width = 0.8 / len(domains)
    fig, ax = plt.subplots(figsize=(max(5.0, 0.9 * len(labels)), 3.8))
    x = np.arange(len(labels))
    for j, dom in enumerate(domains):
        by = {f"{r['method']} N={r['n']} {r['strategy']}": r for r in rows if r["test_domain"] == dom}
        mean = [by[k]["mae_mean"] if k in by else np.nan for k in labels]
        std = [by[k]["mae_std"] if k in by else np.nan for k in labels]
        ax.bar(x + (j - (len(domains) - 1) / 2) * width, mean, width, yerr=std, capsize=2, label=dom)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("MAE [m]")
    ax.legend(title="test domain", fontsize=7)
    return _save(fig, path)


def render(what, rows, path):
    return {"trajectories": plot_trajectories, "cdf": plot_cdf, "table": plot_table}[what](rows, path)
