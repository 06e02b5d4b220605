import numpy as np
import pytest

from alpeval.datasets import gen_gaussian_blobs, split
from alpeval.network import ModelSpec, Parameters, init_params
from alpeval.training import TrainConfig, train_natural


def random_params(rng: np.random.Generator, spec: ModelSpec, bias_scale: float = 0.1) -> Parameters:
    """Parameters with non-zero biases, so ReLU kinks are not all at the origin."""
    base = init_params(spec, int(rng.integers(0, 2**31)))
    biases = tuple(rng.normal(size=b.shape) * bias_scale for b in base.biases)
    return Parameters(spec, base.weights, biases)


def linear_params(W: np.ndarray, b: np.ndarray) -> Parameters:
    return Parameters(ModelSpec(W.shape[0], (), W.shape[1]), (W,), (b,))


@pytest.fixture(scope="session")
def blobs():
    ds = gen_gaussian_blobs(100, 2, 3, 0.05, 0)
    return split(ds, 0.8, 0)


@pytest.fixture(scope="session")
def blob_model(blobs):
    train, _ = blobs
    return train_natural(ModelSpec.mlp(2, [16], 3), train, TrainConfig(epochs=30, seed=1))
