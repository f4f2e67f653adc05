import numpy as np
import pytest

import dgpkit as dk


@pytest.fixture(scope="session")
def toy_small():
    """Small normalized toy problem shared by fast tests."""
    return dk.gen_toy(300, 60, seed=1)


@pytest.fixture(scope="session")
def trained_small(toy_small):
    train, test = toy_small
    parts = dk.partition(train, 4, "random", 0)
    experts = dk.train_experts(train, parts, dk.OptimizerConfig(max_iter=40))
    preds = dk.predict_experts(experts, test.inputs)
    return train, test, parts, experts, preds


def random_spd(m, seed, ridge=0.1):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(m, 3 * m))
    return a @ a.T / (3 * m) + ridge * np.eye(m)
