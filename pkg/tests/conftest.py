"""Shared fixtures: small labeled datasets are expensive, so build them once."""

import numpy as np
import pytest

from cfgnn.channel import RadioDefaults
from cfgnn.data import generate_unlabeled, label_samples


@pytest.fixture(scope="session")
def radio():
    return RadioDefaults()


@pytest.fixture(scope="session")
def labeled_4x2():
    """24 solved (4, 2) urban samples; shared because labeling is slow."""
    samples = generate_unlabeled([(4, 2, "urban", 24)], run_seed=11)
    labeled = label_samples(samples, threads=1)
    assert len(labeled) == 24
    return labeled


@pytest.fixture(scope="session")
def labeled_8x3():
    """16 solved (8, 3) urban samples for cross-shape checks."""
    samples = generate_unlabeled([(8, 3, "urban", 16)], run_seed=21)
    labeled = label_samples(samples, threads=1)
    assert len(labeled) == 16
    return labeled


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, labeled_4x2):
    """A short real training run on the shared dataset, reused by eval tests."""
    from cfgnn.training import TrainConfig, split_train_val, train

    out_dir = tmp_path_factory.mktemp("tiny_run")
    cfg = TrainConfig(epochs=8, batch_size=8, seed=1)
    train_set, val_set = split_train_val(labeled_4x2, cfg)
    model, history = train(train_set, val_set, cfg, str(out_dir))
    return {"model": model, "history": history, "out_dir": out_dir,
            "train_set": train_set, "val_set": val_set}
