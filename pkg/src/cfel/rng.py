"""Counter-based random streams keyed by (run seed, device, step).

Each stream is a Philox generator whose key is derived from the run seed and
device id and whose counter encodes the step index, so the draws a device
makes at step ``t`` never depend on scheduling or on other devices.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

# counter word 3 separates stream families
BATCH_STREAM = 0
EPOCH_STREAM = 1
NOISE_STREAM = 2


@lru_cache(maxsize=65536)
def _key(seed: int, device: int) -> tuple[int, int]:
    state = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, device]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def stream(seed: int, device: int, step: int, family: int = BATCH_STREAM) -> np.random.Generator:
    key = np.array(_key(int(seed), int(device)), dtype=np.uint64)
    counter = np.array([0, 0, step, family], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def sample_batch(seed: int, device: int, step: int, n_samples: int, batch_size: int | None) -> np.ndarray:
    """Uniform with-replacement batch of local indices; ``None`` means the full dataset."""
    if batch_size is None:
        return np.arange(n_samples)
    return stream(seed, device, step).integers(0, n_samples, size=batch_size)


def epoch_order(seed: int, device: int, epoch_counter: int, n_samples: int) -> np.ndarray:
    return stream(seed, device, epoch_counter, EPOCH_STREAM).permutation(n_samples)


def gaussian_noise(seed: int, device: int, step: int, dim: int, variance: float) -> np.ndarray:
    """Isotropic noise with ``E||xi||^2 = variance``."""
    return stream(seed, device, step, NOISE_STREAM).standard_normal(dim) * np.sqrt(variance / dim)
