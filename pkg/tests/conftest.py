import numpy as np
import pytest
import torch

from clickseg import DatasetSpec, ModelConfig, SegmentationModel, generate_synthetic


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(channels=8, stem_channels=4)


@pytest.fixture
def tiny_model(tiny_config):
    torch.manual_seed(0)
    return SegmentationModel(tiny_config)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(DatasetSpec(count=6, height=64, width=64, seed=5))
