"""Deterministic SVG heatmaps of nucleus-by-nucleus matrices.

Color ramps are fixed so figures from different runs compare directly:

* ``dice``: white ``#f7fbff`` to navy ``#08306b`` over [0, 1]
* ``distance``: navy ``#08306b`` to white ``#f7fbff`` over [0, max finite value],
  so short distances are dark like high overlap
* ``effect``: red ``#b2182b`` through white to blue ``#2166ac`` over [-r, r],
  r = max |value| (atrophy is red)

Absent cells are drawn light grey (``#d9d9d9``) and annotated ``n/a``.
"""
from __future__ import annotations

import matplotlib
from matplotlib.colors import LinearSegmentedColormap
from matplotlib.figure import Figure
import numpy as np

RAMPS = {
    "dice": ("#f7fbff", "#6baed6", "#08306b"),
    "distance": ("#08306b", "#6baed6", "#f7fbff"),
    "effect": ("#b2182b", "#f7f7f7", "#2166ac"),
}
ABSENT_COLOR = "#d9d9d9"

_RC = {
    "svg.hashsalt": "thalbench",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 7,
}


def _limits(kind: str, values: np.ndarray, absent: np.ndarray):
    finite = values[~absent & np.isfinite(values)]
    if kind == "dice":
        return 0.0, 1.0
    if kind == "distance":
        top = float(finite.max()) if finite.size else 1.0
        return 0.0, top if top > 0 else 1.0
    r = float(np.abs(finite).max()) if finite.size else 1.0
    r = r if r > 0 else 1.0
    return -r, r


def render_heatmap(path, values, absent, row_labels, col_labels, kind: str = "dice",
                   title: str = "", fmt: str = "{:.2f}") -> None:
    """Write one annotated heatmap to ``path`` as a standalone SVG."""
    if kind not in RAMPS:
        raise ValueError(f"unknown ramp {kind!r}")
    values = np.asarray(values, dtype=float)
    absent = np.asarray(absent, dtype=bool) | ~np.isfinite(values)
    cmap = LinearSegmentedColormap.from_list(kind, RAMPS[kind])
    cmap.set_bad(ABSENT_COLOR)
    lo, hi = _limits(kind, values, absent)
    nr, nc = values.shape
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(1.2 + 0.42 * nc, 1.0 + 0.32 * nr))
        ax = fig.add_subplot()
        shown = np.ma.masked_array(values, mask=absent)
        im = ax.imshow(shown, cmap=cmap, vmin=lo, vmax=hi, aspect="auto",
                       interpolation="nearest")
        ax.set_xticks(range(nc), labels=col_labels, rotation=90)
        ax.set_yticks(range(nr), labels=row_labels)
        if title:
            ax.set_title(title)
        for i in range(nr):
            for j in range(nc):
                if absent[i, j]:
                    text, color = "n/a", "#404040"
                else:
                    v = values[i, j]
                    text = fmt.format(v)
                    frac = (v - lo) / (hi - lo)
                    dark = frac > 0.6 if kind == "dice" else (
                        frac < 0.4 if kind == "distance" else abs(frac - 0.5) > 0.3)
                    color = "white" if dark else "black"
                ax.text(j, i, text, ha="center", va="center", fontsize=5, color=color)
        fig.colorbar(im, ax=ax, fraction=0.04, pad=0.02)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "thalbench"})
