import numpy as np
import pytest

from vicreg_audio.model import BlockConfig, ModelConfig

# small enough for element-wise finite differences, but every layer type is present
TINY = ModelConfig(
    encoder_blocks=(BlockConfig(4, stride=2, groups=1), BlockConfig(6, stride=2, groups=2)),
    encoder_out_dim=6,
    projector_dim=5,
    num_classes=3,
    input_shape=(9, 8),
)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    from toy import make_toy_corpus
    return make_toy_corpus(tmp_path_factory.mktemp("corpus"))
