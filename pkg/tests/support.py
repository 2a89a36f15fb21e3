"""Test-side helpers: random tensors, perturbed archives, float64 views."""

import numpy as np

from modalfuse import ModuleConfig, Tensor, init_weights
from modalfuse.gradcheck import _perturb

TEST_ASFF = ModuleConfig(channels=8, height=8, width=8, groups=2, ratio=4)
TEST_FATM = ModuleConfig(channels=8, height=8, width=8, ratio=4)


def rand(rng, dims, dtype=np.float32):
    return Tensor(rng.standard_normal(dims), dtype=dtype)


def archive(which, seed, cfg=None):
    """Initialised archive with biases and BN statistics re-drawn."""
    cfg = cfg or (TEST_ASFF if which == "asff" else TEST_FATM)
    return _perturb(init_weights(cfg, which, seed), np.random.default_rng(10_000 + seed))


def widen(mapping):
    return {k: Tensor(v.data, dtype=np.float64) for k, v in mapping.items()}


def plain(mapping):
    return {k: v.data.astype(np.float64) for k, v in mapping.items()}
