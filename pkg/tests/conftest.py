import numpy as np
import pytest

from oepg.graph import generate_sbm
from oepg.trainer import TrainConfig


@pytest.fixture
def tiny_config():
    return TrainConfig(
        epochs=3, warmup_epochs=1, batch_size=8, hidden_dim=6, layers=2, hops=1,
        scales=(4, 2), budget=2, seed=3,
    )


@pytest.fixture
def tiny_sbm():
    return generate_sbm(2, 12, 0.5, 0.05, 0.3, seed=5)

