"""Blend images toward a replacement color according to perturbedness maps."""

from __future__ import annotations

from typing import Iterator, Union

import numpy as np

from .core import Image, SampleSet, SegmentMaskStack
from .masking import combine


def _as_color(color: Union[float, np.ndarray], channels: int) -> np.ndarray:
    arr = np.asarray(color, dtype=np.float64).ravel()
    if arr.size == 1:
        return np.full(channels, arr[0])
    if arr.size != channels:
        raise ValueError(f"color has {arr.size} channels, image has {channels}")
    return arr


def apply_perturbation(image: Image, pmap: np.ndarray,
                       color: Union[float, np.ndarray]) -> Image:
    """Pixelwise convex blend: out = image * (1 - map) + color * map.

    A map value of 1 replaces the pixel with the color outright; 0 keeps the
    original. With zero-mean normalized inputs and color 0 this reduces to
    plain multiplication by (1 - map).
    """
    pmap = np.asarray(pmap, dtype=np.float64)
    if pmap.shape != (image.height, image.width):
        raise ValueError(
            f"perturbedness map shape {pmap.shape} does not match image "
            f"({image.height}, {image.width})"
        )
    if pmap.min() < 0.0 or pmap.max() > 1.0:
        raise ValueError("perturbedness map has values outside [0, 1]")
    rgb = _as_color(color, image.channels)
    out = image.data * (1.0 - pmap)[:, :, None] + rgb * pmap[:, :, None]
    return Image(image.height, image.width, image.channels, out, image.space)


def perturb_batch(image: Image, stack: SegmentMaskStack, samples: SampleSet,
                  color: Union[float, np.ndarray]) -> Iterator[Image]:
    """Yield one perturbed image per sample row, lazily and in row order.

    Laziness matters for the thousands-of-samples regimes; consumers batch
    the stream into model calls at whatever size suits them.
    """
    if (stack.height, stack.width) != (image.height, image.width):
        raise ValueError(
            f"mask stack is {stack.height}x{stack.width}, image is "
            f"{image.height}x{image.width}"
        )
    if samples.n_segments != stack.n_segments:
        raise ValueError(
            f"sample set covers {samples.n_segments} segments, stack has {stack.n_segments}"
        )
    for row in samples.indicators:
        yield apply_perturbation(image, combine(stack, row), color)
