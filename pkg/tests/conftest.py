import numpy as np
import pytest

from ordquant.classifier import HyperGrid
from ordquant.data import Dataset, FeatureSchema
from ordquant.protocol import ProtocolConfig
from ordquant.synth import generate, make_spec


@pytest.fixture
def small_schema():
    return FeatureSchema((("G1", (("A", 2), ("B", 3))),))


@pytest.fixture
def small_dataset(small_schema):
    X = np.arange(20, dtype=float).reshape(4, 5)
    return Dataset(X, np.array([1, 2, 3, 5]), small_schema, ids=("a", "b", "c", "d"))


@pytest.fixture(scope="session")
def informative():
    """5-class synthetic data with one strong block and one noise block."""
    return generate(make_spec([("S", 4, 0.8)], [("N", 4)], per_class=200, seed=7))


@pytest.fixture(scope="session")
def tiny_cfg():
    return ProtocolConfig.scaled(
        200, 2, repetitions=1, app_samples=10, app_sample_size=100,
        val_samples=10, val_sample_size=100, grid=HyperGrid((1.0,), ("uniform",)),
    )
