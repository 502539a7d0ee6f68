"""Shared data model for the attribution pipeline.

All types are immutable after construction (arrays are locked read-only) and
carry no behavior beyond construction, validation, and (de)serialization.
Wire and file formats store real tensors as little-endian 32-bit floats,
row-major, base64-encoded inside JSON documents; computation elsewhere in the
package is done at 64-bit.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

# Tolerance for the pixelwise partition-sum bound of mask stacks.
PARTITION_TOL = 1e-6


class ColorSpace(str, Enum):
    RAW_0_255 = "raw_0_255"
    UNIT_0_1 = "unit_0_1"
    NORMALIZED_ZERO_MEAN = "normalized_zero_mean"


class SmoothingMethod(str, Enum):
    NONE = "none"
    BILINEAR_UPSAMPLE = "bilinear_upsample"
    GAUSSIAN_FILTER = "gaussian_filter"


class SampleOrigin(str, Enum):
    ONLY_ONE = "only_one"
    ALL_BUT_ONE = "all_but_one"
    RANDOM = "random"
    ENTROPIC = "entropic"


class AttributionMethod(str, Enum):
    CIU = "CIU"
    PDA = "PDA"
    LIME = "LIME"
    SHAP = "SHAP"
    RISE = "RISE"


def _frozen_array(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.flags.writeable = False
    return out


def encode_tensor(arr: np.ndarray) -> str:
    """Encode an array as base64 of little-endian float32, row-major."""
    data = np.ascontiguousarray(arr, dtype="<f4")
    return base64.b64encode(data.tobytes()).decode("ascii")


def decode_tensor(payload: str, shape: Sequence[int]) -> np.ndarray:
    """Decode a base64 little-endian float32 payload into the given shape."""
    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    flat = np.frombuffer(raw, dtype="<f4")
    expected = int(np.prod(shape))
    if flat.size != expected:
        raise ValueError(
            f"tensor payload holds {flat.size} values, expected {expected} "
            f"for shape {tuple(shape)}"
        )
    return flat.reshape(tuple(shape)).copy()


@dataclass(frozen=True)
class Image:
    """An image as a (height, width, channels) float array plus its value space."""

    height: int
    width: int
    channels: int
    data: np.ndarray  # (H, W, C), row-major, channel-interleaved
    space: ColorSpace

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        object.__setattr__(self, "data", _frozen_array(arr, np.float64))
        object.__setattr__(self, "space", ColorSpace(self.space))


@dataclass(frozen=True)
class SegmentMap:
    """Per-pixel integer segment labels partitioning an image."""

    height: int
    width: int
    labels: np.ndarray  # (H, W) ints in [0, n_segments)
    n_segments: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen_array(self.labels, np.int32))


@dataclass(frozen=True)
class SmoothingConfig:
    """How per-segment indicator masks are smoothed, if at all."""

    method: SmoothingMethod
    sigma: Optional[float] = None  # gaussian_filter only
    grid_shape: Optional[tuple[int, int]] = None  # bilinear_upsample only

    def __post_init__(self):
        object.__setattr__(self, "method", SmoothingMethod(self.method))
        if self.grid_shape is not None:
            object.__setattr__(self, "grid_shape", tuple(int(v) for v in self.grid_shape))


@dataclass(frozen=True)
class SegmentMaskStack:
    """One perturbedness mask per segment, values in [0, 1].

    Masks use the perturbedness convention: 1 means the pixel is fully
    replaced when that segment is perturbed. With smoothing disabled each
    mask is exactly the 0/1 indicator of its segment.
    """

    n_segments: int
    masks: np.ndarray  # (S, H, W)
    smoothing: SmoothingConfig

    def __post_init__(self):
        object.__setattr__(self, "masks", _frozen_array(self.masks, np.float64))

    @property
    def height(self) -> int:
        return self.masks.shape[1]

    @property
    def width(self) -> int:
        return self.masks.shape[2]


@dataclass(frozen=True)
class SampleSet:
    """Binary matrix of perturbation choices: entry 1 = segment perturbed."""

    n_samples: int
    n_segments: int
    indicators: np.ndarray  # (n_samples, n_segments) in {0, 1}
    origin: SampleOrigin
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "indicators", _frozen_array(self.indicators, np.uint8))
        object.__setattr__(self, "origin", SampleOrigin(self.origin))


@dataclass(frozen=True)
class PredictionRecord:
    """Model output for one sample: the explained-class score, optionally all scores."""

    sample_index: int
    output: float
    full_scores: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "output", float(self.output))
        if self.full_scores is not None:
            object.__setattr__(self, "full_scores", _frozen_array(self.full_scores, np.float64))


@dataclass(frozen=True)
class AttributionResult:
    """Per-segment weights plus an optional per-pixel attribution map."""

    segment_weights: np.ndarray
    method: AttributionMethod
    reference_output: float
    pixel_map: Optional[np.ndarray] = None  # (H, W)

    def __post_init__(self):
        object.__setattr__(self, "segment_weights", _frozen_array(self.segment_weights, np.float64))
        object.__setattr__(self, "method", AttributionMethod(self.method))
        object.__setattr__(self, "reference_output", float(self.reference_output))
        if self.pixel_map is not None:
            object.__setattr__(self, "pixel_map", _frozen_array(self.pixel_map, np.float64))


def _validate_image(img: Image) -> list[str]:
    out = []
    if img.channels not in (1, 3):
        out.append(f"channels must be 1 or 3, got {img.channels}")
    if img.data.shape != (img.height, img.width, img.channels):
        out.append(
            f"data shape {img.data.shape} does not match "
            f"({img.height}, {img.width}, {img.channels})"
        )
    if not np.all(np.isfinite(img.data)):
        out.append("data contains non-finite values")
    elif img.space is ColorSpace.UNIT_0_1 and (img.data.min() < 0.0 or img.data.max() > 1.0):
        out.append("unit_0_1 image has values outside [0, 1]")
    return out


def _validate_segment_map(seg: SegmentMap) -> list[str]:
    out = []
    if seg.n_segments < 2:
        out.append(f"n_segments must be >= 2, got {seg.n_segments}")
    if seg.labels.shape != (seg.height, seg.width):
        out.append(f"labels shape {seg.labels.shape} does not match ({seg.height}, {seg.width})")
        return out
    if seg.labels.size:
        lo, hi = int(seg.labels.min()), int(seg.labels.max())
        if lo < 0 or hi >= seg.n_segments:
            out.append(f"label out of range: labels span [{lo}, {hi}], allowed [0, {seg.n_segments})")
        else:
            present = np.bincount(seg.labels.ravel(), minlength=seg.n_segments) > 0
            missing = np.flatnonzero(~present)
            if missing.size:
                out.append(f"segment ids never used: {missing.tolist()}")
    return out


def _validate_mask_stack(stack: SegmentMaskStack) -> list[str]:
    out = []
    if stack.masks.ndim != 3 or stack.masks.shape[0] != stack.n_segments:
        out.append(
            f"masks shape {stack.masks.shape} does not provide one mask per "
            f"{stack.n_segments} segments"
        )
        return out
    if stack.masks.min() < -PARTITION_TOL or stack.masks.max() > 1.0 + PARTITION_TOL:
        out.append("mask values outside [0, 1]")
    total = stack.masks.sum(axis=0)
    if total.max() > 1.0 + PARTITION_TOL:
        out.append(f"partition sum exceeded: pixelwise mask sum reaches {total.max():.8f}")
    if stack.smoothing.method is SmoothingMethod.NONE:
        binary = (stack.masks == 0.0) | (stack.masks == 1.0)
        if not binary.all():
            out.append("smoothing disabled but masks are not exact 0/1 indicators")
    return out + validate(stack.smoothing)


def _validate_smoothing(cfg: SmoothingConfig) -> list[str]:
    out = []
    if cfg.method is SmoothingMethod.GAUSSIAN_FILTER and (cfg.sigma is None or cfg.sigma <= 0):
        out.append(f"gaussian_filter smoothing requires sigma > 0, got {cfg.sigma}")
    if cfg.method is SmoothingMethod.BILINEAR_UPSAMPLE and cfg.grid_shape is None:
        out.append("bilinear_upsample smoothing requires a grid_shape")
    return out


def _validate_sample_set(ss: SampleSet) -> list[str]:
    out = []
    if ss.indicators.shape != (ss.n_samples, ss.n_segments):
        out.append(
            f"indicator shape {ss.indicators.shape} does not match "
            f"({ss.n_samples}, {ss.n_segments})"
        )
        return out
    if not np.isin(ss.indicators, (0, 1)).all():
        out.append("indicators must be binary")
    if ss.origin in (SampleOrigin.ONLY_ONE, SampleOrigin.ALL_BUT_ONE):
        if ss.n_samples != ss.n_segments + 1:
            out.append(
                f"{ss.origin.value} sampling must have n_segments + 1 samples, "
                f"got {ss.n_samples} for {ss.n_segments} segments"
            )
        if not (ss.indicators.sum(axis=1) == 0).any():
            out.append(f"{ss.origin.value} sampling must contain the all-zeros row")
    return out


def _validate_records(records: Sequence[PredictionRecord]) -> list[str]:
    out = []
    idx = sorted(r.sample_index for r in records)
    if len(set(idx)) != len(idx):
        out.append("sample indices are not unique")
    elif idx and idx != list(range(len(idx))):
        out.append("sample indices are not dense from 0")
    return out


def _validate_attribution(res: AttributionResult) -> list[str]:
    out = []
    if res.segment_weights.ndim != 1 or res.segment_weights.size == 0:
        out.append("segment_weights must be a non-empty vector")
    if res.pixel_map is not None and res.pixel_map.ndim != 2:
        out.append("pixel_map must be a 2-D height x width map")
    return out


def validate(obj: Any) -> list[str]:
    """Return all invariant violations of a core type; empty list means ok.

    Violations are data, not failures: callers that need hard errors raise on
    a non-empty result themselves. A list or tuple of PredictionRecord is
    validated as one record collection.
    """
    if isinstance(obj, Image):
        return _validate_image(obj)
    if isinstance(obj, SegmentMap):
        return _validate_segment_map(obj)
    if isinstance(obj, SegmentMaskStack):
        return _validate_mask_stack(obj)
    if isinstance(obj, SmoothingConfig):
        return _validate_smoothing(obj)
    if isinstance(obj, SampleSet):
        return _validate_sample_set(obj)
    if isinstance(obj, PredictionRecord):
        return [] if np.isfinite(obj.output) else ["output is not finite"]
    if isinstance(obj, AttributionResult):
        return _validate_attribution(obj)
    if isinstance(obj, (list, tuple)) and all(isinstance(r, PredictionRecord) for r in obj):
        return _validate_records(obj)
    raise TypeError(f"cannot validate object of type {type(obj).__name__}")


def to_dict(obj: Any) -> dict:
    """Serialize a core type to a JSON-ready dict (tensors as base64 float32)."""
    if isinstance(obj, Image):
        return {
            "type": "Image",
            "height": obj.height,
            "width": obj.width,
            "channels": obj.channels,
            "space": obj.space.value,
            "data": encode_tensor(obj.data),
        }
    if isinstance(obj, SegmentMap):
        if obj.n_segments >= 1 << 24:
            raise ValueError("segment labels above 2^24 do not survive float32 encoding")
        d = {
            "type": "SegmentMap",
            "height": obj.height,
            "width": obj.width,
            "n_segments": obj.n_segments,
            "labels": encode_tensor(obj.labels),
        }
        if obj.meta:
            d["meta"] = dict(obj.meta)
        return d
    if isinstance(obj, SmoothingConfig):
        d = {"type": "SmoothingConfig", "method": obj.method.value}
        if obj.sigma is not None:
            d["sigma"] = float(obj.sigma)
        if obj.grid_shape is not None:
            d["grid_shape"] = list(obj.grid_shape)
        return d
    if isinstance(obj, SegmentMaskStack):
        return {
            "type": "SegmentMaskStack",
            "n_segments": obj.n_segments,
            "height": obj.height,
            "width": obj.width,
            "smoothing": to_dict(obj.smoothing),
            "masks": encode_tensor(obj.masks),
        }
    if isinstance(obj, SampleSet):
        d = {
            "type": "SampleSet",
            "n_samples": obj.n_samples,
            "n_segments": obj.n_segments,
            "origin": obj.origin.value,
            "indicators": encode_tensor(obj.indicators),
        }
        if obj.seed is not None:
            d["seed"] = int(obj.seed)
        if obj.meta:
            d["meta"] = dict(obj.meta)
        return d
    if isinstance(obj, PredictionRecord):
        d = {
            "type": "PredictionRecord",
            "sample_index": obj.sample_index,
            "output": float(np.float32(obj.output)),
        }
        if obj.full_scores is not None:
            d["full_scores"] = encode_tensor(obj.full_scores)
            d["n_classes"] = int(obj.full_scores.size)
        return d
    if isinstance(obj, AttributionResult):
        d = {
            "type": "AttributionResult",
            "method": obj.method.value,
            "reference_output": float(np.float32(obj.reference_output)),
            "n_segments": int(obj.segment_weights.size),
            "segment_weights": encode_tensor(obj.segment_weights),
        }
        if obj.pixel_map is not None:
            d["height"] = obj.pixel_map.shape[0]
            d["width"] = obj.pixel_map.shape[1]
            d["pixel_map"] = encode_tensor(obj.pixel_map)
        return d
    raise TypeError(f"cannot serialize object of type {type(obj).__name__}")


def from_dict(d: dict) -> Any:
    """Reconstruct a core type from its to_dict() representation."""
    kind = d.get("type")
    if kind == "Image":
        shape = (d["height"], d["width"], d["channels"])
        return Image(d["height"], d["width"], d["channels"],
                     decode_tensor(d["data"], shape), ColorSpace(d["space"]))
    if kind == "SegmentMap":
        labels = decode_tensor(d["labels"], (d["height"], d["width"]))
        return SegmentMap(d["height"], d["width"], labels.astype(np.int32),
                          d["n_segments"], dict(d.get("meta", {})))
    if kind == "SmoothingConfig":
        grid = d.get("grid_shape")
        return SmoothingConfig(SmoothingMethod(d["method"]), d.get("sigma"),
                               tuple(grid) if grid else None)
    if kind == "SegmentMaskStack":
        masks = decode_tensor(d["masks"], (d["n_segments"], d["height"], d["width"]))
        return SegmentMaskStack(d["n_segments"], masks, from_dict(d["smoothing"]))
    if kind == "SampleSet":
        ind = decode_tensor(d["indicators"], (d["n_samples"], d["n_segments"]))
        return SampleSet(d["n_samples"], d["n_segments"], ind.astype(np.uint8),
                         SampleOrigin(d["origin"]), d.get("seed"), dict(d.get("meta", {})))
    if kind == "PredictionRecord":
        scores = None
        if "full_scores" in d:
            scores = decode_tensor(d["full_scores"], (d["n_classes"],))
        return PredictionRecord(d["sample_index"], d["output"], scores)
    if kind == "AttributionResult":
        weights = decode_tensor(d["segment_weights"], (d["n_segments"],))
        pixel_map = None
        if "pixel_map" in d:
            pixel_map = decode_tensor(d["pixel_map"], (d["height"], d["width"]))
        return AttributionResult(weights, AttributionMethod(d["method"]),
                                 d["reference_output"], pixel_map)
    raise ValueError(f"unknown serialized type: {kind!r}")
