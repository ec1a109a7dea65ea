"""Shared fixtures: a small fast config and tamed weights.

Weights drawn by the seeded initializer are untrained; over many segments
the associative quotient can amplify activations until f32 overflows.
Damping the memory value projection stands in for a trained model's
moderate scale without touching the initializer contract, and keeps every
fixture finite in both precisions.
"""

from dataclasses import replace

import numpy as np
import pytest

from armt import ModelConfig, init_weights
from armt.tensor_ops import warmup_kernels

MEM_VALUE_DAMP = 0.03125


def damped(weights, factor=MEM_VALUE_DAMP):
    """Weights with the memory value projection scaled down."""
    return replace(weights, w_v_mem=weights.w_v_mem * factor)


def token_stream(config, n_segments, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, config.vocab_size, n_segments * config.segment_size,
                        dtype=np.int64)


@pytest.fixture(scope="session", autouse=True)
def _compiled_kernels():
    # One compile per precision up front so no test times a JIT.
    warmup_kernels(np.float64)
    warmup_kernels(np.float32)


@pytest.fixture(scope="session")
def small_config():
    return ModelConfig(n_layers=3, d_model=16, n_heads=2, d_ff=32,
                       segment_size=6, num_mem_tokens=2, d_mem=4,
                       vocab_size=50, seed=7)


@pytest.fixture(scope="session")
def small_weights(small_config):
    return damped(init_weights(small_config))
