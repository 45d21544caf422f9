import numpy as np
import pytest
import torch
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_model():
    """Random-weight tiny model shared by read-only tests."""
    from streamstt.model import build_model

    return build_model("tiny", seed=1234)


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
