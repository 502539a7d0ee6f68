"""Partition an image into segments by grid or SLIC-style clustering."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage
from skimage import color as skcolor

from .core import ColorSpace, Image, SegmentMap


def grid_segment(height: int, width: int, rows: int, cols: int) -> SegmentMap:
    """Split an image into a rows x cols grid of rectangular segments.

    Pixel (r, c) gets label floor(r * rows / height) * cols + floor(c * cols / width),
    so segment pixel counts differ only by floor rounding.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"grid must have at least one row and column, got {rows}x{cols}")
    if rows > height or cols > width:
        raise ValueError(
            f"grid {rows}x{cols} does not fit an image of {height}x{width} pixels"
        )
    band_r = (np.arange(height, dtype=np.int64) * rows) // height
    band_c = (np.arange(width, dtype=np.int64) * cols) // width
    labels = band_r[:, None] * cols + band_c[None, :]
    return SegmentMap(height, width, labels, rows * cols)


def _fallback_grid(height: int, width: int, n_segments: int, reason: str) -> SegmentMap:
    side = math.ceil(math.sqrt(n_segments))
    seg = grid_segment(height, width, min(side, height), min(side, width))
    return SegmentMap(height, width, seg.labels, seg.n_segments,
                      meta={"fallback": "grid", "reason": reason})


def _init_centers(lab: np.ndarray, n_segments: int) -> np.ndarray:
    """Regular-grid centers, each nudged to the lowest-gradient pixel nearby."""
    h, w = lab.shape[:2]
    step = math.sqrt(h * w / n_segments)
    rows = max(1, round(h / step))
    cols = max(1, round(w / step))
    if rows * cols < 2:
        if w >= h:
            cols = 2
        else:
            rows = 2

    gy, gx = np.gradient(lab, axis=(0, 1))
    grad = (gy ** 2 + gx ** 2).sum(axis=2)

    centers = np.empty((rows * cols, 5))
    k = 0
    for r in range(rows):
        for c in range(cols):
            cy = min(h - 1, int((r + 0.5) * h / rows))
            cx = min(w - 1, int((c + 0.5) * w / cols))
            y0, y1 = max(0, cy - 1), min(h, cy + 2)
            x0, x1 = max(0, cx - 1), min(w, cx + 2)
            patch = grad[y0:y1, x0:x1]
            best = np.unravel_index(np.argmin(patch), patch.shape)
            if patch[best] < grad[cy, cx]:
                cy, cx = y0 + best[0], x0 + best[1]
            centers[k] = (cy, cx, *lab[cy, cx])
            k += 1
    return centers


def slic_segment(image: Image, n_segments: int, compactness: float = 10.0,
                 max_iter: int = 10) -> SegmentMap:
    """Cluster pixels in combined color-position space, SLIC style.

    Works on unit-range images converted to CIELAB. Distance between a pixel
    and a center is sqrt(d_color^2 + (d_xy * compactness / step)^2) with
    step = sqrt(H * W / n_segments); assignment is windowed to 2*step around
    each center. After clustering, disconnected blobs and segments smaller
    than (H * W / n_segments) / 4 are merged into their largest adjacent
    segment, and labels are renumbered densely in first-occurrence scan
    order. The final segment count may differ slightly from n_segments.

    A single-color image has no color structure to cluster; it falls back to
    a ceil(sqrt(n_segments))^2 grid, flagged in the result's meta.
    """
    if image.space is not ColorSpace.UNIT_0_1:
        raise ValueError(f"slic_segment requires a unit_0_1 image, got {image.space.value}")
    if n_segments < 2:
        raise ValueError(f"n_segments must be >= 2, got {n_segments}")

    h, w = image.height, image.width
    data = image.data
    if np.ptp(data) == 0.0:
        return _fallback_grid(h, w, n_segments, "single-color image")

    rgb = data if image.channels == 3 else np.repeat(data, 3, axis=2)
    lab = skcolor.rgb2lab(rgb)

    step = math.sqrt(h * w / n_segments)
    spatial_scale = (compactness / step) ** 2
    centers = _init_centers(lab, n_segments)
    reach = max(1, int(math.ceil(2 * step)))

    labels = np.zeros((h, w), dtype=np.int32)
    for _ in range(max_iter):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for k in range(len(centers)):
            cy, cx = centers[k, 0], centers[k, 1]
            y0, y1 = max(0, int(cy) - reach), min(h, int(cy) + reach + 1)
            x0, x1 = max(0, int(cx) - reach), min(w, int(cx) + reach + 1)
            dc2 = ((lab[y0:y1, x0:x1] - centers[k, 2:]) ** 2).sum(axis=2)
            yy = np.arange(y0, y1, dtype=np.float64)[:, None]
            xx = np.arange(x0, x1, dtype=np.float64)[None, :]
            d2 = dc2 + ((yy - cy) ** 2 + (xx - cx) ** 2) * spatial_scale
            window = best[y0:y1, x0:x1]
            closer = d2 < window
            window[closer] = d2[closer]
            labels[y0:y1, x0:x1][closer] = k

        if (labels < 0).any():
            _assign_stranded(labels, centers, spatial_scale)

        for k in range(len(centers)):
            mask = labels == k
            if not mask.any():
                continue
            ys, xs = np.nonzero(mask)
            centers[k, 0] = ys.mean()
            centers[k, 1] = xs.mean()
            centers[k, 2:] = lab[mask].mean(axis=0)

    labels = _merge_small_and_orphans(labels, n_segments)
    labels = _relabel_dense(labels)
    count = int(labels.max()) + 1
    if count < 2:
        return _fallback_grid(h, w, n_segments, "clustering collapsed to one segment")
    return SegmentMap(h, w, labels, count)


def _assign_stranded(labels: np.ndarray, centers: np.ndarray, spatial_scale: float) -> None:
    ys, xs = np.nonzero(labels < 0)
    d2 = ((ys[:, None] - centers[None, :, 0]) ** 2
          + (xs[:, None] - centers[None, :, 1]) ** 2) * spatial_scale
    labels[ys, xs] = np.argmin(d2, axis=1)


def _component_adjacency(comp: np.ndarray, n_comp: int) -> list[set[int]]:
    neighbors: list[set[int]] = [set() for _ in range(n_comp)]
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        diff = a != b
        pairs = np.unique(np.stack([a[diff], b[diff]], axis=1), axis=0)
        for u, v in pairs:
            neighbors[u].add(int(v))
            neighbors[v].add(int(u))
    return neighbors


def _merge_small_and_orphans(labels: np.ndarray, n_segments: int) -> np.ndarray:
    """Merge disconnected blobs, then undersized segments, into the largest neighbor."""
    h, w = labels.shape
    min_size = (h * w / n_segments) / 4

    comp = np.full((h, w), -1, dtype=np.int32)
    comp_seg: list[int] = []
    sizes: list[int] = []
    for seg_id in np.unique(labels):
        blob_labels, n_blobs = ndimage.label(labels == seg_id)
        for j in range(1, n_blobs + 1):
            mask = blob_labels == j
            comp[mask] = len(comp_seg)
            comp_seg.append(int(seg_id))
            sizes.append(int(mask.sum()))
    n_comp = len(comp_seg)
    neighbors = _component_adjacency(comp, n_comp)

    parent = list(range(n_comp))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def merge(victim: int, absorber: int) -> None:
        rv, ra = find(victim), find(absorber)
        parent[rv] = ra
        sizes[ra] += sizes[rv]
        neighbors[ra] |= {find(n) for n in neighbors[rv]}
        neighbors[ra].discard(ra)
        neighbors[ra].discard(rv)

    def largest_neighbor(root: int) -> int:
        cands = {find(n) for n in neighbors[root]} - {root}
        if not cands:
            return root
        return max(sorted(cands), key=lambda r: sizes[r])

    # Orphan blobs: everything but each segment id's largest component.
    mains: dict[int, int] = {}
    for c in range(n_comp):
        s = comp_seg[c]
        if s not in mains or sizes[c] > sizes[mains[s]]:
            mains[s] = c
    for c in range(n_comp):
        if mains[comp_seg[c]] != c:
            target = largest_neighbor(find(c))
            if target != find(c):
                merge(c, target)

    # Undersized segments, smallest first, until all meet the size floor.
    while True:
        roots = sorted({find(c) for c in range(n_comp)})
        if len(roots) <= 1:
            break
        small = [r for r in roots if sizes[r] < min_size]
        if not small:
            break
        victim = min(small, key=lambda r: (sizes[r], r))
        target = largest_neighbor(victim)
        if target == victim:
            break
        merge(victim, target)

    root_of = np.fromiter((find(c) for c in range(n_comp)), dtype=np.int32, count=n_comp)
    return root_of[comp]


def _relabel_dense(labels: np.ndarray) -> np.ndarray:
    flat = labels.ravel()
    uniq, first = np.unique(flat, return_index=True)
    order = np.argsort(np.argsort(first, kind="stable"), kind="stable")
    remap = np.empty(int(uniq.max()) + 1, dtype=np.int32)
    remap[uniq] = order
    return remap[flat].reshape(labels.shape)
