"""SVG report figures. matplotlib runs headless and writes reproducible files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp so identical data gives identical files
_RC = {"svg.hashsalt": "gpvtf", "svg.fonttype": "path"}
_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_metric_vs_mr(summary: list[dict], metric: str, path) -> None:
    """One line per condition: mean ``metric`` against missing rate, std as error bars."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 3.8))
        conditions = list(dict.fromkeys(r["condition"] for r in summary))
        for cond in conditions:
            pts = sorted((r["mr"], r[f"{metric}_mean"], r[f"{metric}_std"]) for r in summary if r["condition"] == cond)
            xs, ys, es = zip(*pts)
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=cond)
        ax.set_xlabel("missing rate")
        ax.set_ylabel(metric.upper())
        ax.set_ylim(0.0, 1.02)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def plot_losses(losses: dict[str, list[float]], path) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.8))
        for name, trace in losses.items():
            if trace:
                ax.plot(range(len(trace)), trace, label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        _save(fig, path)
