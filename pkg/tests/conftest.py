import os
import sys

import numpy as np
import pytest

from pixattr import ColorSpace, Image

STUB_PATH = os.path.join(os.path.dirname(__file__), "wire_stub.py")


def stub_command(*extra: str) -> list[str]:
    return [sys.executable, STUB_PATH, *extra]


def unit_image(height: int, width: int, channels: int = 3, seed: int = 0) -> Image:
    rng = np.random.Generator(np.random.Philox(key=seed))
    data = rng.random((height, width, channels))
    return Image(height, width, channels, data, ColorSpace.UNIT_0_1)


class CountingPredictor:
    """Delegates to another predictor while counting batches and images."""

    def __init__(self, inner):
        self.inner = inner
        self.batches = 0
        self.images = 0

    @property
    def spec(self):
        return self.inner.spec

    def predict_batch(self, images):
        self.batches += 1
        self.images += len(images)
        return self.inner.predict_batch(images)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=99))
