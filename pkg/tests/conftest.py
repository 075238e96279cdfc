import os
from pathlib import Path

import pytest

from vibnet.data import load_mnist

FALLBACK_DATA_DIR = "/root/data/mnist"


def mnist_dir():
    path = Path(os.environ.get("DATA_DIR") or FALLBACK_DATA_DIR)
    if not (path / "t10k-images-idx3-ubyte").exists() and not (
            path / "mnist" / "t10k-images-idx3-ubyte").exists():
        return None
    return path


@pytest.fixture(scope="session")
def mnist_path():
    path = mnist_dir()
    if path is None:
        pytest.skip("MNIST IDX files not found (set DATA_DIR)")
    return path


@pytest.fixture(scope="session")
def mnist_train(mnist_path):
    return load_mnist("train", mnist_path)


@pytest.fixture(scope="session")
def mnist_test(mnist_path):
    return load_mnist("test", mnist_path)


def pytest_terminal_summary(terminalreporter):
    from .helpers import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
