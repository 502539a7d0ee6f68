import sys

import pytest

from model_server import demo

from wire_driver import LineClient


@pytest.fixture(scope="session")
def checkpoint_path(tmp_path_factory):
    """Train the demo net once per session and save it as a servable checkpoint."""
    path = tmp_path_factory.mktemp("checkpoint") / "demo.pt"
    net = demo.train_demo(seed=0)
    demo.save_checkpoint(net, path)
    return path


@pytest.fixture(scope="session")
def server_argv(checkpoint_path):
    return [sys.executable, "-m", "model_server", "demo-cnn",
            "--checkpoint", str(checkpoint_path)]


@pytest.fixture(scope="module")
def client(server_argv):
    """One long-lived session shared by the happy-path protocol tests."""
    session = LineClient(server_argv)
    yield session
    session.close()
