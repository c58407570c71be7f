import numpy as np
import pytest
from scipy.sparse.csgraph import shortest_path

from gml_emd.criterion import class_weights, normalize_weights
from gml_emd.datasets import synth_generate
from gml_emd.models import SynthConfig, TrainingSet


def random_histogram(rng, d):
    return rng.dirichlet(np.ones(d))


def random_metric(rng, d):
    """A random point of the metric cone: shortest paths over random edge lengths."""
    lengths = rng.uniform(0.1, 1.0, size=(d, d))
    lengths = (lengths + lengths.T) / 2.0
    np.fill_diagonal(lengths, 0.0)
    return shortest_path(lengths, method="FW", directed=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_data():
    return synth_generate(SynthConfig(d=8, n_train_per_class=4, n_test_per_class=3, seed=7))


@pytest.fixture
def toy_train(toy_data):
    histograms, labels = toy_data.train
    return normalize_weights(TrainingSet(histograms, class_weights(labels)))


@pytest.fixture
def four_point_train(rng):
    """Two classes of two histograms in d=3."""
    histograms = np.array([random_histogram(rng, 3) for _ in range(4)])
    return normalize_weights(TrainingSet(histograms, class_weights([0, 0, 1, 1])))
