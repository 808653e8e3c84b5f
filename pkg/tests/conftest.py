import os
from pathlib import Path

import numpy as np
import pytest

from staticbackdoor.imaging import Image

MNIST_DIR = Path(os.environ.get("STATICBACKDOOR_MNIST", "/root/data/mnist"))
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR_DIR = Path(os.environ.get("STATICBACKDOOR_CIFAR10", "/root/data/cifar-10-batches-bin"))

RAMP = np.array(
    [[0, 16, 32, 48],
     [64, 80, 96, 112],
     [128, 144, 160, 176],
     [192, 208, 224, 240]],
    dtype=np.uint8,
)


def mnist_path(key):
    return MNIST_DIR / MNIST_FILES[key]


def have_mnist():
    return all(mnist_path(k).is_file() for k in MNIST_FILES)


requires_mnist = pytest.mark.skipif(not have_mnist(), reason=f"MNIST IDX files not found in {MNIST_DIR}")


@pytest.fixture
def ramp():
    return Image(RAMP)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.lines():
            terminalreporter.write_line(line)
