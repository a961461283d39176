import numpy as np
import pytest
import torch

from pickplace import dataset
from pickplace.geometry import DEFAULT_FRAME

torch.set_num_threads(2)
torch.set_flush_denormal(True)


@pytest.fixture(scope="session")
def frame():
    return DEFAULT_FRAME


@pytest.fixture(scope="session")
def bowls_dataset(tmp_path_factory):
    """Two expert episodes of put-blocks-in-bowls, shared across tests."""
    root = tmp_path_factory.mktemp("demos")
    path = dataset.generate_demonstrations("put-blocks-in-bowls", "seen", 2, 0, root)
    return dataset.load_dataset(path)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
