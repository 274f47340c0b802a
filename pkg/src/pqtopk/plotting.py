"""Matplotlib rendering of benchmark reports."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import METHODS, BenchReport  # noqa: E402

STYLE = {
    "dense": dict(color="#4d4d4d", marker="s", label="dense (matmul)"),
    "recjpq": dict(color="#d95f02", marker="^", label="RecJPQ accumulator"),
    "pqtopk": dict(color="#1b9e77", marker="o", label="PQTopK"),
}


def plot_scaling(report: BenchReport, path: Union[str, Path], title: Optional[str] = None) -> Path:
    """Log-log median latency vs catalogue size with p10-p90 bars; returns the written path."""
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    for meth in METHODS:
        cells = [c for c in report.cells if c.method == meth and not c.skipped]
        if not cells:
            continue
        x = [c.num_items for c in cells]
        y = [c.median_ms for c in cells]
        err = [[c.median_ms - c.p10_ms for c in cells], [c.p90_ms - c.median_ms for c in cells]]
        ax.errorbar(x, y, yerr=err, capsize=3, linewidth=1.4, markersize=5, **STYLE[meth])
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("catalogue size |I|")
    ax.set_ylabel("median latency per query (ms)")
    if report.cells:
        c0 = report.cells[0]
        ax.set_title(title or f"m={c0.m}, b={c0.b}, d={c0.d}, K={c0.K}, threads={report.threads}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
