"""Command-line entry points: explain one image, evaluate a matrix, check a server.

Exit codes: 0 success, 1 configuration error, 2 model transport error,
3 evaluation finished but some (image, config) records failed.
The model endpoint comes from --model or the PIXATTR_MODEL environment
variable; "host:port" connects over TCP, anything else is spawned as a child
process speaking the wire protocol on its standard streams.
"""

from __future__ import annotations

import glob
import json
import os
import sys

import click
import numpy as np
from PIL import Image as PILImage

from .core import ColorSpace, Image, to_dict
from .harness import (
    ConfigError,
    aggregate_records,
    config_hash,
    config_to_dict,
    expand_config_document,
    load_configs,
    parse_config,
    run_matrix,
    run_pipeline,
    write_aggregates_csv,
    write_records_csv,
    write_sidecar,
)
from .models import ModelConnectionError, connect_external
from .report import render_aggregate_figures, render_heatmap

MODEL_ENV_VAR = "PIXATTR_MODEL"

DEFAULT_EXPLAIN_CONFIG = {
    "segmenter": {"kind": "grid", "rows": 7, "cols": 7},
    "smoothing": {"method": "bilinear_upsample"},
    "sampler": {"kind": "random", "n_samples": 400, "seed": 0},
    "attribution": "RISE",
    "granularity": "pixel",
    "color": {"kind": "image_mean"},
    "steps": 10,
}


def _fail(code: int, message: str) -> None:
    click.echo(message, err=True)
    sys.exit(code)


def _endpoint(option_value):
    endpoint = option_value or os.environ.get(MODEL_ENV_VAR)
    if not endpoint:
        _fail(1, f"config error: no model endpoint; pass --model or set {MODEL_ENV_VAR}")
    return endpoint


def _load_image(path: str, target_dims=None) -> Image:
    pil = PILImage.open(path).convert("RGB")
    if target_dims is not None and pil.size != (target_dims[1], target_dims[0]):
        pil = pil.resize((target_dims[1], target_dims[0]), PILImage.BILINEAR)
    arr = np.asarray(pil, dtype=np.float64) / 255.0
    return Image(arr.shape[0], arr.shape[1], 3, arr, ColorSpace.UNIT_0_1)


def _merge_flags(doc: dict, method, sampler, n_samples, seed, granularity, steps,
                 grid, slic, sigma, bilinear, color) -> dict:
    """CLI flags override the corresponding config-file fields."""
    doc = dict(doc)
    if grid:
        try:
            rows, cols = (int(v) for v in grid.lower().split("x"))
        except ValueError:
            raise ConfigError(f"--grid expects ROWSxCOLS, got {grid!r}") from None
        doc["segmenter"] = {"kind": "grid", "rows": rows, "cols": cols}
    if slic is not None:
        doc["segmenter"] = {"kind": "slic", "n_segments": slic}
    if sigma is not None:
        doc["smoothing"] = {"method": "gaussian_filter", "sigma": sigma}
    if bilinear:
        doc["smoothing"] = {"method": "bilinear_upsample"}
    if sampler:
        doc["sampler"] = {"kind": sampler}
    if n_samples is not None:
        doc.setdefault("sampler", {})["n_samples"] = n_samples
    if seed is not None:
        doc.setdefault("sampler", {})["seed"] = seed
    if method:
        doc["attribution"] = method
    if granularity:
        doc["granularity"] = granularity
    if steps is not None:
        doc["steps"] = steps
    if color:
        doc["color"] = {"kind": color}
    return doc


@click.group()
def main():
    """Perturbation-based image attribution and faithfulness evaluation."""


@main.command()
@click.argument("image_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_opt", help="server endpoint (host:port or command)")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON config file (single pipeline)")
@click.option("--method", type=str, help="attribution method (CIU/PDA/LIME/SHAP/RISE)")
@click.option("--sampler", type=str, help="only_one | all_but_one | random | entropic")
@click.option("--n-samples", type=int, help="sample count for random/entropic")
@click.option("--seed", type=int, help="seed for the random sampler")
@click.option("--granularity", type=click.Choice(["segment", "pixel"]))
@click.option("--steps", type=int, help="occlusion steps for evaluation runs")
@click.option("--grid", type=str, help="grid segmenter as ROWSxCOLS")
@click.option("--slic", type=int, help="SLIC segmenter with this many segments")
@click.option("--sigma", type=float, help="gaussian mask smoothing sigma")
@click.option("--bilinear", is_flag=True, help="bilinear mask smoothing (grid only)")
@click.option("--color", type=click.Choice(["dataset_mean", "image_mean", "zero"]),
              help="replacement color policy")
@click.option("--target-class", type=int, help="class to explain (default: argmax)")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".")
def explain(image_path, model_opt, config_path, method, sampler, n_samples, seed,
            granularity, steps, grid, slic, sigma, bilinear, color, target_class, out_dir):
    """Explain one image: write a heatmap PNG and a weights JSON."""
    try:
        doc = dict(DEFAULT_EXPLAIN_CONFIG)
        if config_path:
            with open(config_path, "r", encoding="utf-8") as fh:
                doc.update(json.load(fh))
        doc = _merge_flags(doc, method, sampler, n_samples, seed, granularity,
                           steps, grid, slic, sigma, bilinear, color)
        cfg = parse_config(doc)
    except (ConfigError, json.JSONDecodeError) as exc:
        _fail(1, f"config error: {exc}")

    endpoint = _endpoint(model_opt)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(image_path))[0]
    try:
        with connect_external(endpoint) as predictor:
            image = _load_image(image_path, predictor.spec.input[:2])
            run = run_pipeline(cfg, image, stem, predictor, target_class)
    except ModelConnectionError as exc:
        _fail(2, f"model transport error: {exc}")
    except ValueError as exc:
        _fail(1, f"config error: {exc}")

    heatmap_path = os.path.join(out_dir, f"{stem}_heatmap.png")
    render_heatmap(run.pixel_map, image, heatmap_path)
    weights_path = os.path.join(out_dir, f"{stem}_weights.json")
    payload = {
        "image_id": stem,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "target_class": run.target_class,
        "reference_output": run.reference_Y,
        "n_segments": int(run.segments.n_segments),
        "n_samples_used": run.n_samples_used,
        "segment_weights": [float(w) for w in run.segment_weights],
    }
    with open(weights_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"class {run.target_class} (score {run.reference_Y:.4f}) -> "
               f"{heatmap_path}, {weights_path}")


def _collect_images(pattern: str) -> list[str]:
    if os.path.isdir(pattern):
        paths = [
            os.path.join(pattern, name)
            for name in sorted(os.listdir(pattern))
            if name.lower().endswith((".png", ".jpg", ".jpeg", ".bmp"))
        ]
    else:
        paths = sorted(glob.glob(pattern))
    if not paths:
        raise ConfigError(f"no images match {pattern!r}")
    return paths


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON config document (single pipeline or base+matrix)")
@click.option("--images", "images_pattern", required=True,
              help="image directory or glob")
@click.option("--model", "model_opt", help="server endpoint (host:port or command)")
@click.option("--target-class", type=int, help="class to explain (default: per-image argmax)")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="results")
def evaluate(config_path, images_pattern, model_opt, target_class, out_dir):
    """Run the config matrix over images; write CSV results, sidecar, and figures."""
    try:
        configs = load_configs(config_path)
        image_paths = _collect_images(images_pattern)
    except ConfigError as exc:
        _fail(1, f"config error: {exc}")

    endpoint = _endpoint(model_opt)
    os.makedirs(out_dir, exist_ok=True)
    try:
        with connect_external(endpoint) as predictor:
            images = [
                (os.path.splitext(os.path.basename(p))[0], _load_image(p, predictor.spec.input[:2]))
                for p in image_paths
            ]
            records, aggregates, failures = run_matrix(configs, images, predictor, target_class)
    except ModelConnectionError as exc:
        _fail(2, f"model transport error: {exc}")

    results_path = os.path.join(out_dir, "results.csv")
    write_records_csv(records, results_path)
    write_aggregates_csv(aggregates, os.path.join(out_dir, "aggregates.csv"))
    write_sidecar(os.path.join(out_dir, "results.meta.json"),
                  configs, records, failures, predictor.spec)
    figures = render_aggregate_figures(aggregates, out_dir)
    click.echo(f"{len(records)} records ({len(failures)} failures) -> {results_path}; "
               f"{len(figures)} figures")
    for failure in failures:
        click.echo(f"failed: {failure['image_id']} {failure['config_hash']}: "
                   f"{failure['error']}", err=True)
    if failures:
        sys.exit(3)


@main.command("serve-check")
@click.option("--model", "model_opt", help="server endpoint (host:port or command)")
def serve_check(model_opt):
    """Handshake with a model server and round-trip one probe batch."""
    endpoint = _endpoint(model_opt)
    try:
        with connect_external(endpoint) as predictor:
            spec = predictor.spec
            h, w, c = spec.input
            probe = Image(h, w, c, np.zeros((h, w, c)), ColorSpace.UNIT_0_1)
            scores = predictor.predict_batch([probe, probe])
            if scores.shape != (2, spec.n_classes):
                _fail(2, f"model transport error: probe returned shape {scores.shape}, "
                         f"expected (2, {spec.n_classes})")
            if not np.array_equal(scores[0], scores[1]):
                click.echo("warning: identical probes returned different scores", err=True)
    except ModelConnectionError as exc:
        _fail(2, f"model transport error: {exc}")
    click.echo(json.dumps({
        "input": list(spec.input),
        "n_classes": spec.n_classes,
        "output_semantics": spec.output_semantics.value,
        "identity": spec.identity,
    }, sort_keys=True))
    click.echo("serve-check ok")


if __name__ == "__main__":
    main()
