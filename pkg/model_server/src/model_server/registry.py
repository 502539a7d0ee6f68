"""Model catalog: a name maps to a ready-to-serve torch module plus its contract."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from . import demo


class ModelError(Exception):
    """The requested model cannot be served."""


class UnknownModelError(ModelError):
    """The name is not in the catalog."""


class ModelUnavailableError(ModelError):
    """The name is known but its weights cannot be obtained here."""


IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# Torchvision constructors with their weight enum names. All are ImageNet
# classifiers: 224x224x3 input, 1000 classes.
_TORCHVISION = {
    "alexnet": "AlexNet_Weights",
    "vgg16": "VGG16_Weights",
    "resnet50": "ResNet50_Weights",
}


@dataclass(frozen=True)
class ServingBundle:
    """Everything the protocol loop needs to answer predict requests."""

    model: torch.nn.Module
    identity: str
    input: tuple[int, int, int]  # (H, W, channels)
    n_classes: int
    mean: np.ndarray  # (channels,) float32, applied to unit_0_1 payloads
    std: np.ndarray


def known_models() -> list[str]:
    return sorted([*_TORCHVISION, "demo-cnn"])


def _load_torchvision(name: str) -> tuple[torch.nn.Module, tuple, int, tuple, tuple]:
    import torchvision.models as tv

    weights = getattr(tv, _TORCHVISION[name]).DEFAULT
    try:
        model = getattr(tv, name)(weights=weights)
    except Exception as exc:
        raise ModelUnavailableError(
            f"cannot obtain pretrained weights for {name!r}: {exc}"
        ) from exc
    return model, (224, 224, 3), 1000, IMAGENET_MEAN, IMAGENET_STD


def load_bundle(name: str, checkpoint: Optional[str] = None,
                mean: Optional[Sequence[float]] = None,
                std: Optional[Sequence[float]] = None) -> ServingBundle:
    """Build the serving bundle for a catalog name.

    ``mean``/``std`` override the model's default normalization constants;
    they must match the channel count. ``checkpoint`` is required for
    'demo-cnn' and ignored otherwise.
    """
    if name in _TORCHVISION:
        model, input_dims, n_classes, default_mean, default_std = _load_torchvision(name)
    elif name == "demo-cnn":
        if checkpoint is None:
            raise ModelError("demo-cnn is loaded from a local checkpoint; pass --checkpoint "
                             "(train one with: model-server-train --out demo.pt)")
        try:
            model, meta = demo.load_checkpoint(checkpoint)
        except ValueError as exc:
            raise ModelError(str(exc)) from exc
        input_dims = tuple(int(v) for v in meta["input"])
        n_classes = int(meta["n_classes"])
        default_mean, default_std = meta["mean"], meta["std"]
    else:
        raise UnknownModelError(f"unknown model {name!r}; known: {', '.join(known_models())}")

    channels = input_dims[2]
    mean_arr = np.asarray(default_mean if mean is None else mean, dtype=np.float32)
    std_arr = np.asarray(default_std if std is None else std, dtype=np.float32)
    if mean_arr.shape != (channels,) or std_arr.shape != (channels,):
        raise ModelError(f"mean/std must each hold {channels} values, "
                         f"got {mean_arr.shape} and {std_arr.shape}")
    if np.any(std_arr <= 0):
        raise ModelError(f"std values must be positive, got {std_arr.tolist()}")

    model.eval()
    return ServingBundle(model, name, input_dims, n_classes, mean_arr, std_arr)
