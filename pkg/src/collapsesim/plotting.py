"""Minimal SVG line charts.

Plots are a convenience next to the CSV curves.  Output is deterministic:
no creation date and a fixed hash salt for element ids.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "collapsesim", "svg.fonttype": "none", "figure.figsize": (6.0, 4.0)}


def line_plot(path, x, series: dict, xlabel: str, ylabel: str, title: str = "", logy: bool = False):
    """Write ``series`` (label -> y values, or (x, y) pairs) against ``x`` as SVG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for label, y in series.items():
            if isinstance(y, tuple):
                ax.plot(y[0], y[1], marker=".", label=label)
            else:
                ax.plot(x, y, marker=".", label=label)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
