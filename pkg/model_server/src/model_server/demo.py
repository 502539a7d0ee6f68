"""Synthetic distributed-evidence task and the small CNN trained on it.

Serving a pretrained ImageNet classifier requires weight files that some
environments cannot download. This module provides a substitute that trains
from scratch in seconds on CPU, built so that its evidence structure
resembles a real classifier's: no single image region decides the class.

Images are background noise plus Gaussian blobs at some of 16 slot positions
(a 4x4 grid). Class k lights the 8 slots {2k, 2k+1, ..., 2k+7} modulo 16, so
any single slot is shared by four classes and only the joint pattern
identifies one. Training applies random gray-patch occlusion so the model
degrades gradually and predictably when regions are masked out, instead of
arbitrarily as an off-distribution input would.
"""

from __future__ import annotations

import argparse
import pickle
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

SIZE = 112
N_CLASSES = 8
N_SLOTS = 16
RUN_LENGTH = 8
NOISE_HIGH = 0.4
BLOB_GAIN = 0.6
BLOB_SIGMA = 6.0
NORM_MEAN = (0.5, 0.5, 0.5)
NORM_STD = (0.5, 0.5, 0.5)


def slot_center(slot: int) -> tuple[float, float]:
    """(row, col) of a slot on the 4x4 grid, cell centers 28 px apart."""
    return (14.0 + 28.0 * (slot // 4), 14.0 + 28.0 * (slot % 4))


def lit_slots(label: int) -> list[int]:
    return [(2 * label + j) % N_SLOTS for j in range(RUN_LENGTH)]


def _render(rng: np.random.Generator, labels: np.ndarray) -> np.ndarray:
    images = rng.uniform(0.0, NOISE_HIGH, size=(labels.size, SIZE, SIZE, 3)).astype(np.float32)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    blobs = np.empty((N_SLOTS, SIZE, SIZE), dtype=np.float32)
    for slot in range(N_SLOTS):
        cy, cx = slot_center(slot)
        blobs[slot] = BLOB_GAIN * np.exp(
            -((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * BLOB_SIGMA**2)
        )
    for i, label in enumerate(labels):
        for slot in lit_slots(int(label)):
            images[i, :, :, slot % 3] += blobs[slot]
    return np.clip(images, 0.0, 1.0, out=images)


def synth_images(seed: int, labels) -> np.ndarray:
    """Render one image per label, (n, SIZE, SIZE, 3) float32 in [0, 1]."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise ValueError(f"labels must lie in [0, {N_CLASSES}), got {labels.min()}..{labels.max()}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    return _render(rng, labels)


def synth_batch(seed: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Images plus uniformly drawn labels, deterministic in the seed."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    labels = rng.integers(0, N_CLASSES, size=n)
    return _render(rng, labels), labels.astype(np.int64)


def occlude(rng: np.random.Generator, images: np.ndarray,
            cell: int = 16, keep_prob: float = 0.15) -> np.ndarray:
    """Random gray-patch augmentation on a copy of ``images``.

    Each image independently keeps its clean view with ``keep_prob``;
    otherwise cells of a coarse grid are replaced by the image mean with a
    per-image rate drawn from U(0, 0.8). This mirrors how explanation
    methods probe a model, so the trained model responds to such probes
    with graded confidence instead of out-of-distribution noise.
    """
    out = images.copy()
    rows = images.shape[1] // cell
    cols = images.shape[2] // cell
    for i in range(out.shape[0]):
        if rng.random() < keep_prob:
            continue
        rate = rng.uniform(0.0, 0.8)
        drop = rng.random((rows, cols)) < rate
        mask = np.kron(drop, np.ones((cell, cell), dtype=bool))
        out[i, mask, :] = out[i].mean(axis=(0, 1))
    return out


class BlobNet(nn.Module):
    """Three stride-2 conv blocks, 4x4 average pooling, one linear head."""

    def __init__(self, n_classes: int = N_CLASSES):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 5, stride=2, padding=2), nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(4),
        )
        self.head = nn.Linear(64 * 16, n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).flatten(1))


def _to_net_input(images: np.ndarray) -> torch.Tensor:
    mean = np.asarray(NORM_MEAN, dtype=np.float32)
    std = np.asarray(NORM_STD, dtype=np.float32)
    return torch.from_numpy((images - mean) / std).permute(0, 3, 1, 2).contiguous()


def train_demo(seed: int = 0, n_train: int = 2000, epochs: int = 8,
               lr: float = 2e-3, batch: int = 32) -> BlobNet:
    """Train the demo net with occlusion augmentation; returns it in eval mode.

    Label smoothing keeps the posterior off the 0/1 rails so that masking
    image regions moves the output smoothly; a saturated model would answer
    most perturbation probes with an unchanged score.
    """
    torch.manual_seed(seed)
    net = BlobNet()
    optimizer = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss(label_smoothing=0.1)
    images, labels = synth_batch(seed + 100, n_train)
    y = torch.from_numpy(labels)
    net.train()
    for epoch in range(epochs):
        aug_rng = np.random.Generator(np.random.Philox(key=seed + 200 + epoch))
        x = _to_net_input(occlude(aug_rng, images))
        order = torch.randperm(n_train)
        for start in range(0, n_train, batch):
            idx = order[start:start + batch]
            optimizer.zero_grad()
            loss_fn(net(x[idx]), y[idx]).backward()
            optimizer.step()
    net.eval()
    return net


def accuracy(net: BlobNet, seed: int = 1, n: int = 400) -> float:
    """Share of correct argmax predictions on clean held-out images."""
    images, labels = synth_batch(seed, n)
    net.eval()
    with torch.no_grad():
        predicted = net(_to_net_input(images)).argmax(1).numpy()
    return float((predicted == labels).mean())


def save_checkpoint(net: BlobNet, path) -> None:
    meta = {
        "identity": "demo-cnn",
        "input": [SIZE, SIZE, 3],
        "n_classes": N_CLASSES,
        "mean": list(NORM_MEAN),
        "std": list(NORM_STD),
    }
    torch.save({"state_dict": net.state_dict(), "meta": meta}, path)


def load_checkpoint(path) -> tuple[BlobNet, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise ValueError(f"cannot load checkpoint {path!r}: {exc}") from exc
    if not isinstance(payload, dict) or "state_dict" not in payload or "meta" not in payload:
        raise ValueError(f"checkpoint {path!r} lacks state_dict/meta")
    meta = payload["meta"]
    net = BlobNet(n_classes=int(meta["n_classes"]))
    net.load_state_dict(payload["state_dict"])
    net.eval()
    return net, meta


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="model-server-train",
        description="Train the demo CNN and write a checkpoint servable as 'demo-cnn'.",
    )
    parser.add_argument("--out", required=True, help="checkpoint path to write")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-train", type=int, default=2000)
    parser.add_argument("--epochs", type=int, default=8)
    args = parser.parse_args(argv)
    net = train_demo(seed=args.seed, n_train=args.n_train, epochs=args.epochs)
    save_checkpoint(net, args.out)
    print(f"wrote {args.out} (held-out accuracy {accuracy(net):.3f})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
