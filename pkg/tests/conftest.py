import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

from mcakd import ChannelGenConfig, ModelConfig, PatchSpec, build_model, generate_channel
from mcakd.csi import make_dataset


@pytest.fixture(scope="session")
def toy_gen_config():
    return ChannelGenConfig(
        time_rbs=8, freq_rbs=4, ant_vertical=2, ant_horizontal=2, num_paths=3,
        max_doppler=80.0, seed=11,
    )


@pytest.fixture(scope="session")
def toy_sample(toy_gen_config):
    return generate_channel(toy_gen_config, 0)


@pytest.fixture(scope="session")
def toy_dataset(toy_gen_config):
    return make_dataset(toy_gen_config, {"train": 48, "val": 12}, normalize_mode="global")


@pytest.fixture(scope="session")
def toy_patch():
    return PatchSpec(2, 2, 2)


@pytest.fixture(scope="session")
def toy_model_config(toy_patch):
    return ModelConfig(dim=32, encoder_depth=2, decoder_depth=1, num_heads=4, patch=toy_patch)


@pytest.fixture(scope="session")
def toy_model(toy_model_config):
    return build_model(toy_model_config, "teacher", seed=17)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
