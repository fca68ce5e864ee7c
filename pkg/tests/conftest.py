"""Pytest configuration file."""
import numpy as np
import pytest

from pyfedcdp.accountant import LedgerEntry, PrivacyLedger
from pyfedcdp.datasets import DatasetSpec, load_dataset
from pyfedcdp.federation import partition_iid
from pyfedcdp.nn import Activation, Batch, init_model
from pyfedcdp.seeding import derive_rng
from pyfedcdp.types import Mechanism, Stream


@pytest.fixture
def rng():
    """A fixed generator for test data."""
    return np.random.default_rng(1234)


@pytest.fixture
def sigmoid_model(rng):
    """A twice-differentiable 4-5-3 network."""
    return init_model([4, 5, 3], rng, Activation.SIGMOID)


@pytest.fixture
def relu_model(rng):
    """A 4-6-6-3 ReLU network."""
    return init_model([4, 6, 6, 3], rng, Activation.RELU)


@pytest.fixture
def small_batch(rng):
    """Six examples over four features in [0, 1] with three classes."""
    return Batch(rng.uniform(0.0, 1.0, (6, 4)), np.array([0, 1, 2, 0, 1, 2]))


@pytest.fixture
def make_ledger():
    """Factory for a ledger of identical per-example steps."""

    def _make(steps, q, sigma, delta=1e-5, mechanism=Mechanism.PER_EXAMPLE, per_round=100):
        ledger = PrivacyLedger(delta)
        ledger.extend(
            LedgerEntry(i // per_round, i % per_round, sigma, 1.0, q, mechanism)
            for i in range(steps)
        )
        return ledger

    return _make


@pytest.fixture
def synthetic_dataset():
    """A small, well separated two-class dataset."""
    return load_dataset(DatasetSpec(classes=2, dims=6, n=300, separation=4.0), master_seed=0)


@pytest.fixture
def synthetic_clients(synthetic_dataset):
    """The synthetic training set split over ten clients."""
    return partition_iid(synthetic_dataset.train, 10, derive_rng(0, Stream.DATA, 1))
