import numpy as np
import pytest

from adaptrecon.backbone import ModelConfig
from adaptrecon.synthgen import generate_dataset


@pytest.fixture(scope="session")
def small_dataset():
    """Three centers, two patients each, two protocols per patient (12 cases)."""
    return generate_dataset(patients_per_center={"C001": 2, "C004": 2, "C005": 2})


@pytest.fixture(scope="session")
def tiny_model_config():
    return ModelConfig(cascades=2, width=4, adapter_channels=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
