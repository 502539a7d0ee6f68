"""Render attribution maps and aggregate results to image files."""

from __future__ import annotations

import os

import matplotlib.image
import numpy as np
from matplotlib.figure import Figure

from .core import ColorSpace, Image

HEATMAP_ALPHA = 0.5


def _display_base(image: Image) -> np.ndarray:
    """Base image as displayable [0,1] RGB, whatever space it came in."""
    data = image.data
    if image.space is ColorSpace.RAW_0_255:
        data = data / 255.0
    elif image.space is ColorSpace.NORMALIZED_ZERO_MEAN:
        span = np.ptp(data)
        data = (data - data.min()) / span if span > 0 else np.zeros_like(data)
    if image.channels == 1:
        data = np.repeat(data, 3, axis=2)
    return np.clip(data, 0.0, 1.0)


def render_heatmap(attribution_map: np.ndarray, base_image: Image, path: str) -> str:
    """Overlay a min-max normalized attribution map on the image and save a PNG.

    The gradient runs blue (lowest attribution) through purple to red
    (highest): overlay = (t, 0, 1 - t) for normalized value t, blended onto
    the base at 0.5 alpha. A constant map (min = max) renders all-blue.
    """
    amap = np.asarray(attribution_map, dtype=np.float64)
    if amap.shape != (base_image.height, base_image.width):
        raise ValueError(
            f"attribution map shape {amap.shape} does not match image "
            f"({base_image.height}, {base_image.width})"
        )
    span = np.ptp(amap)
    t = (amap - amap.min()) / span if span > 0 else np.zeros_like(amap)
    overlay = np.stack([t, np.zeros_like(t), 1.0 - t], axis=2)
    blended = (1.0 - HEATMAP_ALPHA) * _display_base(base_image) + HEATMAP_ALPHA * overlay
    matplotlib.image.imsave(path, np.clip(blended, 0.0, 1.0))
    return path


def render_aggregate_figures(tables: dict[str, list[dict]], out_dir: str) -> list[str]:
    """One horizontal bar chart of mean SRG (%) per grouping table."""
    written = []
    for name, rows in tables.items():
        if not rows:
            continue
        metric_keys = ("n_records", "mean_lif_pct", "mean_mif_pct", "mean_srg_pct")
        labels = [
            ", ".join(str(v) for k, v in row.items() if k not in metric_keys)
            for row in rows
        ]
        values = [row["mean_srg_pct"] for row in rows]
        fig = Figure(figsize=(8, 0.4 * len(rows) + 1.5))
        ax = fig.subplots()
        ax.barh(range(len(rows)), values, color="#3465a4")
        ax.set_yticks(range(len(rows)), labels=labels, fontsize=8)
        ax.invert_yaxis()
        ax.set_xlabel("mean SRG (%)")
        ax.set_title(name.replace("_", " "))
        ax.axvline(0.0, color="black", linewidth=0.8)
        fig.tight_layout()
        path = os.path.join(out_dir, f"aggregate_{name}.png")
        fig.savefig(path, dpi=120)
        written.append(path)
    return written
