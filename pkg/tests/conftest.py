import numpy as np
import pytest

from prunelab.data import DatasetSpec, gen_synthetic
from prunelab.network import build_network, mlp_specs
from prunelab.training import TrainConfig, train_model


def make_net(specs, input_shape, seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    return build_network(specs, input_shape, rng)


def tiny_dataset(seed=5, kappa=3, dim=8, m_train=96, m_test=256, **kw):
    spec = DatasetSpec(kappa=kappa, dim=dim, m_train=m_train, m_test=m_test, seed=seed, **kw)
    return gen_synthetic(spec)


@pytest.fixture(scope="session")
def toy_data():
    return tiny_dataset()


@pytest.fixture(scope="session")
def trained_toy(toy_data):
    train_set, test_set = toy_data
    cfg = TrainConfig(epochs=12, batch_size=32, learning_rate=0.1, seed=3)
    specs = mlp_specs(train_set.inputs.shape[1], 12, 2, train_set.kappa)
    return train_model(specs, train_set.inputs.shape[1:], train_set, test_set, cfg)
