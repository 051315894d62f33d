import numpy as np
import pytest

from sefdm_lab import cnn
from sefdm_lab.core import SefdmConfig


@pytest.fixture(scope="session")
def small_trained_model():
    """CNN trained on the N=4, alpha=0.8 channel; shared by the noiseless
    recovery, MLD-dominance and cross-process serialization tests."""
    cfg = SefdmConfig(n_subcarriers=4, alpha=0.8, n0=0.5)
    tcfg = cnn.TrainConfig(steps=2500, batch=256, seed=11)
    model, losses = cnn.train(cfg, tcfg)
    assert np.isfinite(losses).all()
    return model
