"""Shared helpers for building models with known prediction behavior."""

import numpy as np

from distortlab.model import ModelConfig, init_model


def positive_firing_model(seed: int = 3):
    """A randomized model whose head bias sits near zero, so random inputs
    produce a mix of positive and negative pixel predictions."""
    model = init_model(ModelConfig(init_seed=seed), positive_prior=0.5)
    rng = np.random.default_rng(seed)
    for name in model.params:
        model.params[name] = model.params[name] + rng.normal(0, 0.08, model.params[name].shape)
    return model
