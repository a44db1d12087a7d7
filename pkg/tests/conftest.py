import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rotoconv.basis import populate_partial
from rotoconv.datasets import synthetic_image_corpus


def data_root() -> Path:
    return Path(os.environ.get("ROTOCONV_DATA_DIR", Path(__file__).parent.parent / "data"))


def mnist_available() -> bool:
    d = data_root()
    return any((d / n).exists() or (d / (n + ".gz")).exists()
               for n in ("train-images-idx3-ubyte",))


def cifar_available() -> bool:
    d = data_root()
    for base in (d, d / "cifar-10-batches-bin"):
        if (base / "data_batch_1.bin").exists() or (base / "data_batch_1.bin.gz").exists():
            return True
    return False


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def partial_basis():
    r = np.random.default_rng(11)
    return populate_partial(r.uniform(-1.0, 1.0, (2, 4, 3, 3)))


@pytest.fixture
def small_corpus():
    return synthetic_image_corpus(24, 16, seed=5)
