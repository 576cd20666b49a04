import pytest

from dualproto.config import TrainConfig
from dualproto.data import generate_synthetic
from dualproto.train import train


@pytest.fixture(scope="session")
def small_run():
    """One trained desk-scale model shared by the read-only tests."""
    dataset, space = generate_synthetic(3, 3, 16, 0.05, 0.8, 8, seed=0)
    config = TrainConfig(epochs=3, batch_size=16, prefix_len=2, seed=0).validate()
    blob, logs = train(config, dataset=dataset, space=space)
    return config, dataset, space, blob, logs
