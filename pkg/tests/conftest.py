import numpy as np
import pytest

from haicollab.basemodel import BaseClassifier, train_base
from haicollab.collab import CollabModel, CollaborationModule, SelectionModule, init_collab_model
from haicollab.numerics import Rng, init_mlp
from haicollab.taskgen import SymmetricAnnotator, build_multirater, make_gaussian_task


def small_task(seed=0, n_train=600, n_test=300, noise=0.25, separation=3.0, num_classes=3, dim=6, m=3):
    """Compact Gaussian task with a symmetric annotator pool."""
    rng = Rng(seed)
    train, test = make_gaussian_task(num_classes, dim, n_train, n_test, separation, rng)
    annotators = [SymmetricAnnotator(noise) for _ in range(m)]
    train_mr = build_multirater(train, annotators, rng)
    test_mr = build_multirater(test, annotators, rng)
    return train_mr, test_mr


def force_mode(model: CollabModel, index: int) -> CollabModel:
    """Pin the selector's argmax to one mode via a huge output bias."""
    bias = model.selector.params.layers[-1].bias
    bias[:] = -1000.0
    bias[index] = 1000.0
    model.selector.params.layers[-1].weight[:] = 0.0
    return model


def tiny_model(seed=0, dim=6, num_classes=3, m=3, hidden=8) -> CollabModel:
    rng = Rng(seed)
    base = BaseClassifier(init_mlp((dim, hidden, num_classes), rng), num_classes, dim, "lnl_proxy")
    return init_collab_model(base, m, hidden, rng)


@pytest.fixture(scope="session")
def reference_pool():
    """Shared mid-size task for the slower module tests."""
    return small_task(seed=11, n_train=2000, n_test=1000)
