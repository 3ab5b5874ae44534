"""Report figures rendered next to the delimited evaluation output.

PNG output is byte-deterministic: fixed size, fixed dpi, metadata
stripped of anything environment dependent.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .pipeline import EvalReport  # noqa: E402

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": None}}


def cmc_figure(report: EvalReport):
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ranks = np.arange(1, report.cmc.size + 1)
    ax.plot(ranks, report.cmc, marker=".", color="C0")
    ax.set_xlabel("rank")
    ax.set_ylabel("fraction of queries matched")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(f"CMC (mAP {report.map:.4f})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def ap_histogram(report: EvalReport):
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    bins = np.linspace(0.0, 1.0, 21)
    ax.hist(report.per_query_ap, bins=bins, color="C1", edgecolor="black")
    ax.set_xlabel("average precision")
    ax.set_ylabel("queries")
    ax.set_title(f"per-query AP ({report.num_valid_queries} valid queries)")
    fig.tight_layout()
    return fig


def save_report_figures(report: EvalReport, out_dir) -> list[Path]:
    """Write cmc.png and ap_hist.png into out_dir; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, builder in (("cmc.png", cmc_figure), ("ap_hist.png", ap_histogram)):
        fig = builder(report)
        path = out / name
        fig.savefig(path, **_SAVE_KWARGS)
        plt.close(fig)
        paths.append(path)
    return paths
