"""Stand-alone model server speaking the newline-delimited JSON wire protocol.

The package knows two kinds of models: torchvision ImageNet classifiers
(weights fetched by torchvision itself) and a small CNN trained locally on a
synthetic task, for environments where no pretrained weights can be obtained.
Either way the server process is started as

    python3 -m model_server MODEL [--checkpoint PATH] [--port N]

and talks the protocol on its standard streams (or TCP with --port).
"""

from .demo import (
    BlobNet,
    lit_slots,
    load_checkpoint,
    save_checkpoint,
    slot_center,
    synth_batch,
    synth_images,
    train_demo,
)
from .protocol import serve_stdio, serve_tcp
from .registry import (
    ModelError,
    ModelUnavailableError,
    ServingBundle,
    UnknownModelError,
    load_bundle,
)

__version__ = "0.1.0"

__all__ = [
    "BlobNet",
    "ModelError",
    "ModelUnavailableError",
    "ServingBundle",
    "UnknownModelError",
    "lit_slots",
    "load_bundle",
    "load_checkpoint",
    "save_checkpoint",
    "serve_stdio",
    "serve_tcp",
    "slot_center",
    "synth_batch",
    "synth_images",
    "train_demo",
]
