"""Configurable pipeline runner: parse configs, run the evaluation matrix, persist results.

A PipelineConfig names one choice per stage (segmenter, smoothing, sampler,
attribution method, granularity, replacement color, occlusion steps). A config
document is JSON: either a single config object, or {"base": {...},
"matrix": {...}} where every list under "matrix" expands to a cross product
over the base. Stage combinations that cannot work together are rejected at
parse time, not at run time.

The matrix runner shares model calls between configs that agree on everything
upstream of attribution (image, segmenter, smoothing, sampler, seed, color),
so adding attribution methods to a matrix costs no extra perturbation
predictions. Per-record failures are recorded and skipped; one bad pipeline
never aborts a matrix.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import platform
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import __version__
from .attribution import attribute, project_per_pixel
from .core import (
    AttributionMethod,
    ColorSpace,
    Image,
    SampleOrigin,
    SampleSet,
    SegmentMap,
    SegmentMaskStack,
    SmoothingConfig,
    SmoothingMethod,
    to_dict,
)
from .evaluation import srg
from .masking import combine, indicator_masks, smooth_bilinear, smooth_gaussian
from .perturbation import apply_perturbation, perturb_batch
from .sampling import (
    derive_seed,
    sample_all_but_one,
    sample_entropic,
    sample_only_one,
    sample_random,
)
from .segmentation import grid_segment, slic_segment

CSV_COLUMNS = ("config_hash", "image_id", "model", "lif", "mif", "srg", "n_samples_used")


class ConfigError(ValueError):
    """A configuration that can never run; reported before any model call."""


@dataclass(frozen=True)
class SegmenterSpec:
    kind: str  # "grid" | "slic"
    rows: Optional[int] = None
    cols: Optional[int] = None
    n_segments: Optional[int] = None
    compactness: float = 10.0
    max_iter: int = 10


@dataclass(frozen=True)
class SamplerSpec:
    kind: SampleOrigin
    n_samples: Optional[int] = None
    seed: Optional[int] = None


@dataclass(frozen=True)
class ColorPolicy:
    """How the replacement color is chosen for a given image.

    dataset_mean uses the provided per-channel values (or 0 in zero-mean
    normalized space, where the dataset mean is the origin by definition);
    image_mean averages the image itself; zero and explicit are literal.
    """

    kind: str  # "dataset_mean" | "image_mean" | "zero" | "explicit"
    values: Optional[tuple[float, ...]] = None

    def resolve(self, image: Image) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(image.channels)
        if self.kind == "image_mean":
            return image.data.mean(axis=(0, 1))
        if self.values is not None:
            vals = np.asarray(self.values, dtype=np.float64)
            if vals.size not in (1, image.channels):
                raise ValueError(
                    f"color policy has {vals.size} values, image has {image.channels} channels"
                )
            return np.repeat(vals, image.channels) if vals.size == 1 else vals
        if self.kind == "dataset_mean":
            if image.space is ColorSpace.NORMALIZED_ZERO_MEAN:
                return np.zeros(image.channels)
            raise ValueError(
                "dataset_mean color policy needs explicit per-channel values "
                f"for {image.space.value} images"
            )
        raise ValueError("explicit color policy without values")


@dataclass(frozen=True)
class PipelineConfig:
    segmenter: SegmenterSpec
    smoothing: SmoothingConfig
    sampler: SamplerSpec
    attribution: AttributionMethod
    granularity: str = "pixel"  # "segment" | "pixel"
    color: ColorPolicy = field(default_factory=lambda: ColorPolicy("dataset_mean"))
    steps: int = 10


def parse_config(doc: dict) -> PipelineConfig:
    """Validate one config mapping; incompatible stage choices fail here."""
    try:
        seg_doc = dict(doc["segmenter"])
        sam_doc = dict(doc["sampler"])
        method = AttributionMethod(doc["attribution"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"config is missing or mistypes a required field: {exc}") from exc

    kind = seg_doc.pop("kind", None)
    if kind == "grid":
        if not isinstance(seg_doc.get("rows"), int) or not isinstance(seg_doc.get("cols"), int):
            raise ConfigError("grid segmenter needs integer rows and cols")
        segmenter = SegmenterSpec(kind="grid", rows=seg_doc["rows"], cols=seg_doc["cols"])
    elif kind == "slic":
        if not isinstance(seg_doc.get("n_segments"), int):
            raise ConfigError("slic segmenter needs an integer n_segments")
        segmenter = SegmenterSpec(
            kind="slic",
            n_segments=seg_doc["n_segments"],
            compactness=float(seg_doc.get("compactness", 10.0)),
            max_iter=int(seg_doc.get("max_iter", 10)),
        )
    else:
        raise ConfigError(f"unknown segmenter kind {kind!r}")

    smooth_doc = dict(doc.get("smoothing", {"method": "none"}))
    try:
        smethod = SmoothingMethod(smooth_doc.get("method", "none"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if smethod is SmoothingMethod.GAUSSIAN_FILTER:
        sigma = smooth_doc.get("sigma")
        if not isinstance(sigma, (int, float)) or sigma <= 0:
            raise ConfigError(f"gaussian smoothing needs sigma > 0, got {sigma!r}")
        smoothing = SmoothingConfig(smethod, sigma=float(sigma))
    elif smethod is SmoothingMethod.BILINEAR_UPSAMPLE:
        if segmenter.kind != "grid":
            raise ConfigError("bilinear smoothing requires a grid segmenter")
        smoothing = SmoothingConfig(smethod, grid_shape=(segmenter.rows, segmenter.cols))
    else:
        smoothing = SmoothingConfig(SmoothingMethod.NONE)

    try:
        sam_kind = SampleOrigin(sam_doc.get("kind"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if sam_kind in (SampleOrigin.RANDOM, SampleOrigin.ENTROPIC):
        n_samples = sam_doc.get("n_samples")
        if not isinstance(n_samples, int) or n_samples < 1:
            raise ConfigError(f"{sam_kind.value} sampler needs a positive n_samples")
        if sam_kind is SampleOrigin.ENTROPIC and n_samples < 2:
            raise ConfigError("entropic sampler needs n_samples >= 2")
        seed = sam_doc.get("seed")
        if sam_kind is SampleOrigin.RANDOM and not isinstance(seed, int):
            raise ConfigError("random sampler needs an integer seed")
        sampler = SamplerSpec(sam_kind, n_samples=n_samples,
                              seed=seed if sam_kind is SampleOrigin.RANDOM else None)
    else:
        sampler = SamplerSpec(sam_kind)

    if method is AttributionMethod.CIU and sam_kind not in (
            SampleOrigin.ONLY_ONE, SampleOrigin.ALL_BUT_ONE):
        raise ConfigError(
            f"CIU requires only_one or all_but_one sampling, got {sam_kind.value}"
        )

    granularity = doc.get("granularity", "pixel")
    if granularity not in ("segment", "pixel"):
        raise ConfigError(f"granularity must be 'segment' or 'pixel', got {granularity!r}")

    color_doc = doc.get("color", {"kind": "dataset_mean"})
    ckind = color_doc.get("kind")
    if ckind not in ("dataset_mean", "image_mean", "zero", "explicit"):
        raise ConfigError(f"unknown color policy {ckind!r}")
    values = color_doc.get("values")
    if ckind == "explicit" and values is None:
        raise ConfigError("explicit color policy needs values")
    color = ColorPolicy(ckind, tuple(float(v) for v in values) if values is not None else None)

    steps = doc.get("steps", 10)
    if not isinstance(steps, int) or steps < 2:
        raise ConfigError(f"steps must be an integer >= 2, got {steps!r}")

    return PipelineConfig(segmenter, smoothing, sampler, method, granularity, color, steps)


def expand_config_document(doc: dict) -> list[PipelineConfig]:
    """One config object, or base + matrix cross-product expansion."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    if "base" not in doc and "matrix" not in doc:
        return [parse_config(doc)]
    base = doc.get("base", {})
    matrix = doc.get("matrix", {})
    if not isinstance(base, dict) or not isinstance(matrix, dict):
        raise ConfigError("'base' and 'matrix' must be JSON objects")
    for key, options in matrix.items():
        if not isinstance(options, list) or not options:
            raise ConfigError(f"matrix entry {key!r} must be a non-empty list")
    keys = list(matrix.keys())
    configs = []
    for combo in itertools.product(*(matrix[k] for k in keys)):
        merged = dict(base)
        merged.update(dict(zip(keys, combo)))
        configs.append(parse_config(merged))
    return configs


def load_configs(path: str) -> list[PipelineConfig]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return expand_config_document(doc)


def config_to_dict(cfg: PipelineConfig) -> dict:
    seg: dict = {"kind": cfg.segmenter.kind}
    if cfg.segmenter.kind == "grid":
        seg.update(rows=cfg.segmenter.rows, cols=cfg.segmenter.cols)
    else:
        seg.update(n_segments=cfg.segmenter.n_segments,
                   compactness=cfg.segmenter.compactness,
                   max_iter=cfg.segmenter.max_iter)
    sam: dict = {"kind": cfg.sampler.kind.value}
    if cfg.sampler.n_samples is not None:
        sam["n_samples"] = cfg.sampler.n_samples
    if cfg.sampler.seed is not None:
        sam["seed"] = cfg.sampler.seed
    color: dict = {"kind": cfg.color.kind}
    if cfg.color.values is not None:
        color["values"] = list(cfg.color.values)
    smoothing = to_dict(cfg.smoothing)
    del smoothing["type"]
    return {
        "segmenter": seg,
        "smoothing": smoothing,
        "sampler": sam,
        "attribution": cfg.attribution.value,
        "granularity": cfg.granularity,
        "color": color,
        "steps": cfg.steps,
    }


def config_hash(cfg: PipelineConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class RunRecord:
    config_hash: str
    image_id: str
    model: str
    lif: float
    mif: float
    srg: float
    wall_time: float
    n_samples_used: int


@dataclass(frozen=True)
class PipelineRun:
    """Everything one explanation produced, for callers that want more than weights."""

    config: PipelineConfig
    segments: SegmentMap
    samples: SampleSet
    target_class: int
    reference_Y: float
    full_Y: float
    segment_weights: np.ndarray
    pixel_map: np.ndarray
    n_samples_used: int


def _build_segments(cfg: PipelineConfig, image: Image) -> SegmentMap:
    if cfg.segmenter.kind == "grid":
        return grid_segment(image.height, image.width, cfg.segmenter.rows, cfg.segmenter.cols)
    return slic_segment(image, cfg.segmenter.n_segments,
                        cfg.segmenter.compactness, cfg.segmenter.max_iter)


def _build_stack(cfg: PipelineConfig, segments: SegmentMap, image: Image) -> SegmentMaskStack:
    stack = indicator_masks(segments)
    if cfg.smoothing.method is SmoothingMethod.BILINEAR_UPSAMPLE:
        return smooth_bilinear(stack, cfg.smoothing.grid_shape, (image.height, image.width))
    if cfg.smoothing.method is SmoothingMethod.GAUSSIAN_FILTER:
        return smooth_gaussian(stack, cfg.smoothing.sigma)
    return stack


def _build_samples(cfg: PipelineConfig, n_segments: int, image_id: str) -> SampleSet:
    kind = cfg.sampler.kind
    if kind is SampleOrigin.ONLY_ONE:
        return sample_only_one(n_segments)
    if kind is SampleOrigin.ALL_BUT_ONE:
        return sample_all_but_one(n_segments)
    if kind is SampleOrigin.RANDOM:
        return sample_random(n_segments, cfg.sampler.n_samples,
                             derive_seed(cfg.sampler.seed, image_id))
    return sample_entropic(n_segments, cfg.sampler.n_samples)


def _predict_stage(predictor, image: Image, stack: SegmentMaskStack,
                   samples: SampleSet, color: np.ndarray,
                   target_class: Optional[int]) -> tuple[np.ndarray, int, float, float]:
    """Reference, fully-perturbed, and per-sample outputs in one pass.

    Returns (per-sample outputs, resolved target class, reference_Y, full_Y).
    """
    fully = apply_perturbation(image, combine(stack, np.ones(stack.n_segments)), color)
    anchor_scores = np.asarray(predictor.predict_batch([image, fully]))
    target = int(np.argmax(anchor_scores[0])) if target_class is None else int(target_class)
    if not 0 <= target < anchor_scores.shape[1]:
        raise ValueError(f"target class {target} outside [0, {anchor_scores.shape[1]})")
    reference_Y = float(anchor_scores[0, target])
    full_Y = float(anchor_scores[1, target])

    outputs = np.empty(samples.n_samples)
    done = 0
    chunk: list[Image] = []
    batch_size = getattr(predictor, "batch_size", 64)
    for img in perturb_batch(image, stack, samples, color):
        chunk.append(img)
        if len(chunk) == batch_size:
            outputs[done:done + len(chunk)] = np.asarray(
                predictor.predict_batch(chunk))[:, target]
            done += len(chunk)
            chunk = []
    if chunk:
        outputs[done:done + len(chunk)] = np.asarray(predictor.predict_batch(chunk))[:, target]
    return outputs, target, reference_Y, full_Y


def run_pipeline(cfg: PipelineConfig, image: Image, image_id: str, predictor,
                 target_class: Optional[int] = None) -> PipelineRun:
    """Run one full explanation: segment, sample, perturb, predict, attribute."""
    segments = _build_segments(cfg, image)
    stack = _build_stack(cfg, segments, image)
    samples = _build_samples(cfg, stack.n_segments, image_id)
    color = cfg.color.resolve(image)
    outputs, target, reference_Y, full_Y = _predict_stage(
        predictor, image, stack, samples, color, target_class)
    result = attribute(cfg.attribution, samples, outputs, reference_Y, full_Y)
    if cfg.granularity == "segment":
        pixel_map = result.segment_weights[segments.labels]
    else:
        pixel_map = project_per_pixel(result.segment_weights, stack)
    return PipelineRun(
        config=cfg,
        segments=segments,
        samples=samples,
        target_class=target,
        reference_Y=reference_Y,
        full_Y=full_Y,
        segment_weights=result.segment_weights,
        pixel_map=pixel_map,
        n_samples_used=samples.n_samples,
    )


def _stage_key(cfg: PipelineConfig, image_id: str) -> tuple:
    """Cache key for everything upstream of attribution.

    Grid segmentations ignore image content, so their mask stacks are shared
    across images of equal size; SLIC depends on the pixels themselves.
    """
    seg = cfg.segmenter
    smooth = (cfg.smoothing.method.value, cfg.smoothing.sigma, cfg.smoothing.grid_shape)
    if seg.kind == "grid":
        seg_key = ("grid", seg.rows, seg.cols)
    else:
        seg_key = ("slic", seg.n_segments, seg.compactness, seg.max_iter, image_id)
    sampler = (cfg.sampler.kind.value, cfg.sampler.n_samples, cfg.sampler.seed)
    color = (cfg.color.kind, cfg.color.values)
    return (image_id, seg_key, smooth, sampler, color)


def run_matrix(configs: Sequence[PipelineConfig], images: Sequence[tuple[str, Image]],
               predictor, target_class: Optional[int] = None,
               ) -> tuple[list[RunRecord], dict[str, list[dict]], list[dict]]:
    """Evaluate every config on every image.

    Returns (records, aggregates, failures). Aggregates holds grouped means
    (in percent) over two groupings: sampler x attribution, and
    segmenter x granularity x attribution. Failures carry the error text per
    (image, config) without aborting the rest of the matrix.
    """
    seg_cache: dict[tuple, tuple[SegmentMap, SegmentMaskStack]] = {}
    call_cache: dict[tuple, tuple[SampleSet, np.ndarray, int, float, float]] = {}
    records: list[RunRecord] = []
    failures: list[dict] = []
    cfg_hashes = [config_hash(c) for c in configs]

    for image_id, image in images:
        for cfg, chash in zip(configs, cfg_hashes):
            started = time.perf_counter()
            try:
                skey = _stage_key(cfg, image_id)
                seg_key = (skey[1], skey[2], (image.height, image.width))
                if seg_key not in seg_cache:
                    segments = _build_segments(cfg, image)
                    seg_cache[seg_key] = (segments, _build_stack(cfg, segments, image))
                segments, stack = seg_cache[seg_key]
                if skey not in call_cache:
                    samples = _build_samples(cfg, stack.n_segments, image_id)
                    color = cfg.color.resolve(image)
                    outputs, target, ref_Y, full_Y = _predict_stage(
                        predictor, image, stack, samples, color, target_class)
                    call_cache[skey] = (samples, outputs, target, ref_Y, full_Y)
                samples, outputs, target, ref_Y, full_Y = call_cache[skey]

                result = attribute(cfg.attribution, samples, outputs, ref_Y, full_Y)
                if cfg.granularity == "segment":
                    pixel_map = result.segment_weights[segments.labels]
                else:
                    pixel_map = project_per_pixel(result.segment_weights, stack)
                score = srg(predictor, image, pixel_map, target, cfg.steps)
                records.append(RunRecord(
                    config_hash=chash,
                    image_id=image_id,
                    model=predictor.spec.identity,
                    lif=score.lif,
                    mif=score.mif,
                    srg=score.srg,
                    wall_time=time.perf_counter() - started,
                    n_samples_used=samples.n_samples,
                ))
            except Exception as exc:  # noqa: BLE001 - recorded, never aborts the matrix
                failures.append({
                    "image_id": image_id,
                    "config_hash": chash,
                    "error": f"{type(exc).__name__}: {exc}",
                })
    aggregates = aggregate_records(records, dict(zip(cfg_hashes, configs)))
    return records, aggregates, failures


def aggregate_records(records: Sequence[RunRecord],
                      configs_by_hash: dict[str, PipelineConfig]) -> dict[str, list[dict]]:
    """Grouped means in percent, one table per grouping dimension set."""
    groupings = {
        "sampler_x_attribution": lambda c: (
            ("sampler", c.sampler.kind.value),
            ("attribution", c.attribution.value),
        ),
        "segmenter_x_granularity_x_attribution": lambda c: (
            ("segmenter", c.segmenter.kind),
            ("granularity", c.granularity),
            ("attribution", c.attribution.value),
        ),
    }
    tables: dict[str, list[dict]] = {}
    for name, key_fn in groupings.items():
        groups: dict[tuple, list[RunRecord]] = {}
        for rec in records:
            key = key_fn(configs_by_hash[rec.config_hash])
            groups.setdefault(key, []).append(rec)
        rows = []
        for key in sorted(groups):
            members = groups[key]
            row = dict(key)
            row.update(
                n_records=len(members),
                mean_lif_pct=100.0 * float(np.mean([r.lif for r in members])),
                mean_mif_pct=100.0 * float(np.mean([r.mif for r in members])),
                mean_srg_pct=100.0 * float(np.mean([r.srg for r in members])),
            )
            rows.append(row)
        tables[name] = rows
    return tables


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_records_csv(records: Sequence[RunRecord], path: str) -> None:
    """One row per record, fixed column order, no wall time.

    Wall times vary between runs of the same matrix; they live in the JSON
    sidecar so this file is byte-identical across reruns.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([
                rec.config_hash, rec.image_id, rec.model,
                _fmt(rec.lif), _fmt(rec.mif), _fmt(rec.srg), rec.n_samples_used,
            ])


def write_aggregates_csv(tables: dict[str, list[dict]], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["grouping", "group", "n_records",
                         "mean_lif_pct", "mean_mif_pct", "mean_srg_pct"])
        for name, rows in tables.items():
            for row in rows:
                group = ";".join(
                    f"{k}={v}" for k, v in row.items()
                    if k not in ("n_records", "mean_lif_pct", "mean_mif_pct", "mean_srg_pct")
                )
                writer.writerow([
                    name, group, row["n_records"],
                    _fmt(row["mean_lif_pct"]), _fmt(row["mean_mif_pct"]),
                    _fmt(row["mean_srg_pct"]),
                ])


def write_sidecar(path: str, configs: Sequence[PipelineConfig],
                  records: Sequence[RunRecord], failures: Sequence[dict],
                  predictor_spec) -> None:
    """Full run context: configs by hash, environment, per-record wall times."""
    doc = {
        "configs": {config_hash(c): config_to_dict(c) for c in configs},
        "model": {
            "input": list(predictor_spec.input),
            "n_classes": predictor_spec.n_classes,
            "output_semantics": predictor_spec.output_semantics.value,
            "identity": predictor_spec.identity,
        },
        "environment": {
            "package_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "records": [
            {
                "config_hash": r.config_hash,
                "image_id": r.image_id,
                "model": r.model,
                "lif": r.lif,
                "mif": r.mif,
                "srg": r.srg,
                "wall_time": r.wall_time,
                "n_samples_used": r.n_samples_used,
            }
            for r in records
        ],
        "failures": list(failures),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
