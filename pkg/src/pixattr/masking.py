"""Per-segment perturbedness masks: indicators, smoothing, and per-sample combination.

Masks store perturbedness, so 1 means the pixel is fully replaced when its
segment is perturbed. Smoothing softens segment boundaries while keeping the
pixelwise sum over all segments at 1, which in turn keeps combined maps of
full samples at exactly 1.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .core import (
    SegmentMap,
    SegmentMaskStack,
    SmoothingConfig,
    SmoothingMethod,
)


def indicator_masks(segments: SegmentMap) -> SegmentMaskStack:
    """One binary mask per segment: mask_s(p) = 1 iff pixel p has label s."""
    masks = (segments.labels[None, :, :] == np.arange(segments.n_segments)[:, None, None])
    return SegmentMaskStack(
        n_segments=segments.n_segments,
        masks=masks.astype(np.float64),
        smoothing=SmoothingConfig(SmoothingMethod.NONE),
    )


def _axis_weights(n_out: int, n_src: int) -> np.ndarray:
    """(n_out, n_src) bilinear weights, align-centers with clamp-to-edge."""
    u = (np.arange(n_out) + 0.5) * n_src / n_out - 0.5
    u = np.clip(u, 0.0, n_src - 1.0)
    lo = np.floor(u).astype(np.int64)
    hi = np.minimum(lo + 1, n_src - 1)
    t = u - lo
    weights = np.zeros((n_out, n_src))
    weights[np.arange(n_out), lo] += 1.0 - t
    weights[np.arange(n_out), hi] += t
    return weights


def smooth_bilinear(stack: SegmentMaskStack, grid_shape: tuple[int, int],
                    out: tuple[int, int]) -> SegmentMaskStack:
    """Upsample each segment's one-hot grid cell bilinearly to the output size.

    Only defined for stacks built from a grid segmentation: segment s must be
    exactly the indicator of grid cell (s // cols, s % cols). Each cell becomes
    a single hot entry of a rows x cols array, which is then interpolated with
    grid-cell centers aligned to pixel centers and edge values clamped.
    """
    rows, cols = grid_shape
    if stack.smoothing.method is not SmoothingMethod.NONE:
        raise ValueError("bilinear smoothing requires a grid")
    if stack.n_segments != rows * cols:
        raise ValueError("bilinear smoothing requires a grid")
    from .segmentation import grid_segment

    expected = grid_segment(stack.height, stack.width, rows, cols).labels
    ids = np.arange(stack.n_segments)
    if not np.array_equal(stack.masks, (expected[None] == ids[:, None, None]).astype(np.float64)):
        raise ValueError("bilinear smoothing requires a grid")

    h, w = out
    wy = _axis_weights(h, rows)
    wx = _axis_weights(w, cols)
    # mask_s = outer(wy[:, r], wx[:, c]) for the hot cell (r, c); build all at
    # once as an einsum over the one-hot coarse grids.
    coarse = np.zeros((stack.n_segments, rows, cols))
    coarse[ids, ids // cols, ids % cols] = 1.0
    masks = np.einsum("hr,wc,src->shw", wy, wx, coarse, optimize=True)
    return SegmentMaskStack(
        n_segments=stack.n_segments,
        masks=masks,
        smoothing=SmoothingConfig(SmoothingMethod.BILINEAR_UPSAMPLE, grid_shape=(rows, cols)),
    )


def smooth_gaussian(stack: SegmentMaskStack, sigma: float) -> SegmentMaskStack:
    """Convolve each mask with a normalized Gaussian, radius ceil(3*sigma), reflect borders."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    masks = np.stack([
        ndimage.gaussian_filter(m, sigma=sigma, mode="reflect", radius=radius)
        for m in stack.masks
    ])
    np.clip(masks, 0.0, 1.0, out=masks)
    return SegmentMaskStack(
        n_segments=stack.n_segments,
        masks=masks,
        smoothing=SmoothingConfig(SmoothingMethod.GAUSSIAN_FILTER, sigma=float(sigma)),
    )


def combine(stack: SegmentMaskStack, sample: np.ndarray) -> np.ndarray:
    """Perturbedness map for one sample: sum of the selected segments' masks.

    Clipped to [0,1] to absorb the <=1e-6 excess the partition invariant allows.
    """
    sample = np.asarray(sample)
    if sample.shape != (stack.n_segments,):
        raise ValueError(
            f"sample has {sample.shape} entries, stack has {stack.n_segments} segments"
        )
    combined = np.tensordot(sample.astype(np.float64), stack.masks, axes=1)
    return np.clip(combined, 0.0, 1.0)
