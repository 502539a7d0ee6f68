"""Faithfulness scoring by progressive occlusion.

LIF occludes the least influential pixels first, MIF the most influential
first, each over a fixed number of equal steps from 0% to 100% occlusion.
A faithful attribution keeps the model score high along the LIF curve and
drives it down quickly along MIF, so the gap srg = lif - mif grows with
how well the map separates influential from irrelevant pixels. Both curve
means depend on the attribution map only through its pixel ranking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Union

import numpy as np

from .core import Image
from .perturbation import apply_perturbation


@dataclass(frozen=True)
class FaithfulnessScore:
    """LIF/MIF curve means and their gap for one attribution map."""

    lif: float
    mif: float
    srg: float
    steps: int
    occlusion_color: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "occlusion_color",
                           tuple(float(c) for c in self.occlusion_color))
        if self.srg != self.lif - self.mif:
            raise ValueError("srg must equal lif - mif exactly")


def rank_pixels(attribution: np.ndarray,
                direction: Literal["ascending", "descending"]) -> np.ndarray:
    """Flat row-major pixel indices ordered by attribution value.

    Ties keep row-major pixel order in both directions, so a constant map
    ranks identically either way. Non-finite values have no defined rank.
    """
    attribution = np.asarray(attribution, dtype=np.float64)
    if attribution.ndim != 2:
        raise ValueError(f"attribution map must be 2-D, got shape {attribution.shape}")
    if not np.isfinite(attribution).all():
        raise ValueError("non-finite attribution")
    flat = attribution.ravel()
    if direction == "ascending":
        return np.argsort(flat, kind="stable")
    if direction == "descending":
        return np.argsort(-flat, kind="stable")
    raise ValueError(f"direction must be 'ascending' or 'descending', got {direction!r}")


def _occlusion_counts(n_pixels: int, steps: int) -> list[int]:
    # round-half-up keeps the endpoints exact: step 1 occludes nothing,
    # the last step occludes everything.
    return [int(np.floor((k - 1) / (steps - 1) * n_pixels + 0.5)) for k in range(1, steps + 1)]


def occlusion_curve(predictor, image: Image, ranking: np.ndarray, target_class: int,
                    steps: int = 10, color: Optional[Union[float, Sequence[float]]] = None,
                    ) -> tuple[np.ndarray, float]:
    """Target-class score under progressively heavier occlusion along a ranking.

    Step k replaces the first round((k-1)/(steps-1) * H * W) ranked pixels
    (all channels) with the occlusion color, defaulting to the image's
    per-channel mean. All step images go to the predictor as one batch.
    Returns (per-step scores, their mean).
    """
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    n_pixels = image.height * image.width
    ranking = np.asarray(ranking)
    if sorted(ranking.tolist()) != list(range(n_pixels)):
        raise ValueError(f"ranking is not a permutation of {n_pixels} pixels")
    if not 0 <= target_class < predictor.spec.n_classes:
        raise ValueError(
            f"target_class {target_class} outside [0, {predictor.spec.n_classes})"
        )
    if color is None:
        color = image.data.mean(axis=(0, 1))

    occluded = []
    pmap_flat = np.zeros(n_pixels)
    for count in _occlusion_counts(n_pixels, steps):
        pmap_flat[:] = 0.0
        pmap_flat[ranking[:count]] = 1.0
        occluded.append(
            apply_perturbation(image, pmap_flat.reshape(image.height, image.width), color)
        )
    scores = np.asarray(predictor.predict_batch(occluded))[:, target_class]
    return scores, float(scores.mean())


def srg(predictor, image: Image, attribution_map: np.ndarray, target_class: int,
        steps: int = 10, color: Optional[Union[float, Sequence[float]]] = None,
        ) -> FaithfulnessScore:
    """LIF and MIF curve means for one attribution map, and their gap.

    Issues exactly two predictor batches (one per curve).
    """
    attribution_map = np.asarray(attribution_map, dtype=np.float64)
    if attribution_map.shape != (image.height, image.width):
        raise ValueError(
            f"attribution map shape {attribution_map.shape} does not match image "
            f"({image.height}, {image.width})"
        )
    if color is None:
        color = image.data.mean(axis=(0, 1))
    color_vec = np.asarray(color, dtype=np.float64).ravel()
    if color_vec.size == 1:
        color_vec = np.repeat(color_vec, image.channels)

    _, lif = occlusion_curve(predictor, image, rank_pixels(attribution_map, "ascending"),
                             target_class, steps, color_vec)
    _, mif = occlusion_curve(predictor, image, rank_pixels(attribution_map, "descending"),
                             target_class, steps, color_vec)
    return FaithfulnessScore(lif=lif, mif=mif, srg=lif - mif, steps=steps,
                             occlusion_color=tuple(color_vec))
