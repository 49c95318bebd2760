"""Report figures rendered to files with the Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _figure(ncols: int = 1, width: float = 4.0):
    return plt.subplots(1, ncols, figsize=(width * ncols, width * GOLDEN + 0.4),
                        squeeze=False)


def _col(rows, key):
    return np.array([float(r[key]) for r in rows])


def plot_training_curves(metrics, path) -> None:
    """Per-epoch losses on the left, retrieval R@1 on the right."""
    with plt.rc_context(STYLE):
        fig, axes = _figure(2)
        ep = _col(metrics, "epoch")
        ax = axes[0, 0]
        for key in ("loss_total", "loss_itm", "loss_mlm", "loss_cl", "loss_stl"):
            ax.plot(ep, _col(metrics, key), marker=".", label=key[5:])
        frozen = [float(r["epoch"]) for r in metrics if r["phase"] == "frozen"]
        if frozen:
            ax.axvspan(min(frozen) - 0.5, max(frozen) + 0.5, color="0.9", zorder=0)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean batch loss")
        ax.legend(fontsize=7)
        ax = axes[0, 1]
        ax.plot(ep, _col(metrics, "tr_r1"), marker=".", label="image to text")
        ax.plot(ep, _col(metrics, "ir_r1"), marker=".", label="text to image")
        ax.set_xlabel("epoch")
        ax.set_ylabel("R@1")
        ax.legend(fontsize=7)
        fig.savefig(path)
        plt.close(fig)


def plot_retrieval(ret: dict, path) -> None:
    with plt.rc_context(STYLE):
        fig, axes = _figure()
        ax = axes[0, 0]
        ks = [1, 5, 10]
        ax.plot(ks, [ret[f"tr_r{k}"] for k in ks], marker="o", label="image to text")
        ax.plot(ks, [ret[f"ir_r{k}"] for k in ks], marker="s", label="text to image")
        ax.set_xticks(ks)
        ax.set_xlabel("K")
        ax.set_ylabel("R@K")
        ax.set_ylim(0, 1)
        ax.legend(fontsize=7)
        fig.savefig(path)
        plt.close(fig)


def plot_ablation(rows, path, metric: str = "r1") -> None:
    """Seed-mean bars with one-std error bars and the individual seeds."""
    means = [r for r in rows if r["seed"] == "mean"]
    stds = {r["cell"]: float(r[metric]) for r in rows if r["seed"] == "std"}
    names = [r["cell"] for r in means]
    with plt.rc_context(STYLE):
        fig, axes = _figure(width=max(4.0, 0.8 * len(names)))
        ax = axes[0, 0]
        x = np.arange(len(names))
        ax.bar(x, [float(r[metric]) for r in means],
               yerr=[stds.get(n, 0.0) for n in names], color="0.75", capsize=3)
        for i, n in enumerate(names):
            pts = [float(r[metric]) for r in rows
                   if r["cell"] == n and r["seed"] not in ("mean", "std")]
            ax.plot(np.full(len(pts), i), pts, "k.", ms=3)
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel(f"test {metric.upper()}")
        fig.savefig(path)
        plt.close(fig)


def plot_spike_counts(counts, T: int, path) -> None:
    """Histogram of per-(node, channel) spike counts."""
    counts = np.asarray(counts).ravel()
    with plt.rc_context(STYLE):
        fig, axes = _figure()
        ax = axes[0, 0]
        ax.hist(counts, bins=np.arange(T + 2) - 0.5, color="0.4")
        ax.set_yscale("log")
        ax.set_xlabel(f"spike count over T={T}")
        ax.set_ylabel("positions")
        fig.savefig(path)
        plt.close(fig)
