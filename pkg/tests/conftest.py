import numpy as np
import pytest

from latent_recourse.genmodel import train_vae
from latent_recourse.nn import train_classifier
from latent_recourse.synth import synth_classification


@pytest.fixture(scope="session")
def small_split():
    ds = synth_classification(600, seed=3)
    return ds.split((0.6, 0.2, 0.2), seed=3)


@pytest.fixture(scope="session")
def small_models(small_split):
    """Quickly trained linear classifier and conditional VAE (shared read-only)."""
    train = small_split[0]
    clf = train_classifier(train.X, train.labels, "linear-softmax", epochs=15, seed=1)
    vae = train_vae(train, latent_dim=2, epochs=12, seed=1, conditional=True)
    return clf, vae


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
