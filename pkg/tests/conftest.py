import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from attacknet.model import ModelConfig, build_model  # noqa: E402
from attacknet.synthetic import write_dataset  # noqa: E402
from attacknet.tensor import Prng  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return ModelConfig(input_h=8, input_w=8, phase1_filters=2, phase2_filters=4, dense_width=6, augment=False)


@pytest.fixture
def default_model():
    return build_model(ModelConfig(), Prng(0))


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    return write_dataset(tmp_path_factory.mktemp("synth") / "synthA", n_per_class=24, size=32, seed=5)


@pytest.fixture(scope="session")
def synthetic_root_b(tmp_path_factory):
    return write_dataset(tmp_path_factory.mktemp("synth") / "synthB", n_per_class=24, size=32, seed=6)
