"""End-to-end checks through the attribution CLI, spawned as a subprocess.

The server is exercised here exactly the way a user would wire it up:
``pixattr serve-check`` for the handshake and probe round-trip, and
``pixattr evaluate`` for a small faithfulness run. Nothing from the pixattr
package is imported; the CLI and its output files are the interface.
"""

import csv
import json
import shlex
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image as PILImage

from model_server import demo

PIXATTR = [sys.executable, "-m", "pixattr.cli"]


@pytest.fixture(scope="module")
def server_cmd(checkpoint_path):
    return shlex.join([sys.executable, "-m", "model_server", "demo-cnn",
                       "--checkpoint", str(checkpoint_path)])


def test_serve_check_passes(server_cmd):
    result = subprocess.run(PIXATTR + ["serve-check", "--model", server_cmd],
                            capture_output=True, text=True, timeout=180)
    assert result.returncode == 0, result.stderr
    lines = result.stdout.strip().splitlines()
    assert lines[-1] == "serve-check ok"
    spec = json.loads(lines[0])
    assert spec == {
        "input": [demo.SIZE, demo.SIZE, 3],
        "n_classes": demo.N_CLASSES,
        "output_semantics": "probabilities",
        "identity": "demo-cnn",
    }


# The 10-image smoke matrix: SLIC + Gaussian masks, RISE attribution, random
# versus entropic sampling at 400 samples each. The demo net distributes class
# evidence over eight image regions, so perturbing one region (or keeping only
# one) barely identifies the class; mid-sized coalitions carry the signal.
# Random sampling draws those, entropic sampling spends its budget on the
# extremes, and the gap shows up as a per-image SRG advantage for random.


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, server_cmd):
    root = tmp_path_factory.mktemp("smoke")
    image_dir = root / "images"
    image_dir.mkdir()
    labels = np.arange(10) % demo.N_CLASSES
    for i, image in enumerate(demo.synth_images(913, labels)):
        as_bytes = np.round(image * 255).astype(np.uint8)
        PILImage.fromarray(as_bytes).save(image_dir / f"img{i:02d}_c{labels[i]}.png")

    doc = {
        "base": {
            "segmenter": {"kind": "slic", "n_segments": 49},
            "smoothing": {"method": "gaussian_filter", "sigma": 5.0},
            "attribution": "RISE",
            "granularity": "pixel",
            "color": {"kind": "image_mean"},
            "steps": 10,
        },
        "matrix": {
            "sampler": [
                {"kind": "random", "n_samples": 400, "seed": 0},
                {"kind": "entropic", "n_samples": 400},
            ]
        },
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(doc))

    out_dir = root / "out"
    result = subprocess.run(
        PIXATTR + ["evaluate", "--config", str(config_path),
                   "--images", str(image_dir), "--model", server_cmd,
                   "--out", str(out_dir)],
        capture_output=True, text=True, timeout=600,
    )
    assert result.returncode == 0, result.stderr
    assert "20 records (0 failures)" in result.stdout
    return out_dir


@pytest.fixture(scope="module")
def srg_by_sampler(run_dir):
    with open(run_dir / "results.meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    sampler_of = {h: c["sampler"]["kind"] for h, c in meta["configs"].items()}
    per_image: dict[str, dict[str, float]] = {}
    with open(run_dir / "results.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            sampler = sampler_of[row["config_hash"]]
            per_image.setdefault(row["image_id"], {})[sampler] = float(row["srg"])
    assert len(per_image) == 10
    assert all(set(v) == {"random", "entropic"} for v in per_image.values())
    return per_image


def test_random_sampling_mean_srg_positive(srg_by_sampler):
    mean = np.mean([v["random"] for v in srg_by_sampler.values()])
    assert mean > 0.0


def test_random_beats_entropic_on_most_images(srg_by_sampler):
    wins = sum(v["random"] > v["entropic"] for v in srg_by_sampler.values())
    assert wins >= 7, {k: (v["random"], v["entropic"]) for k, v in srg_by_sampler.items()}
