"""Independent, directly coded versions of the algorithms CE-FedAvg reduces to.

These loops share only the gradient primitive and the random streams with
the engine, so comparing trajectories checks the engine's scheduling and
aggregation logic.
"""
from __future__ import annotations

import numpy as np

from . import rng
from .numerics import stoch_gradient


def _grad(config, model, data, k, x, t):
    batch = rng.sample_batch(config.seed, k, t, len(data[k]), config.batch_size)
    g = stoch_gradient(model, x, data[k], batch).gradient
    if config.grad_noise > 0:
        g = g + rng.gaussian_noise(config.seed, k, t, g.shape[0], config.grad_noise)
    return g


def local_sgd(config, model, data, x0, period: int) -> np.ndarray:
    """FedAvg: every device runs ``period`` steps, then all models are averaged."""
    n = len(data)
    x = np.tile(x0, (n, 1))
    for t in range(config.total_steps):
        x = np.stack([x[k] - config.lr * _grad(config, model, data, k, x[k], t) for k in range(n)])
        if (t + 1) % period == 0:
            x[:] = x.mean(axis=0)
    return x


def decentralized_local_sgd(config, model, data, x0, h: np.ndarray) -> np.ndarray:
    """One device per node: ``q`` local steps, then ``pi`` gossip steps with ``h``."""
    n = len(data)
    x = np.tile(x0, (n, 1))
    for t in range(config.total_steps):
        x = np.stack([x[k] - config.lr * _grad(config, model, data, k, x[k], t) for k in range(n)])
        if (t + 1) % config.q == 0:
            for _ in range(config.pi):
                x = h.T @ x
    return x


def hierarchical_sgd(config, model, data, x0, groups) -> np.ndarray:
    """Local steps, group averaging every ``tau`` steps, averaging of group models every ``q*tau``."""
    n = len(data)
    x = np.tile(x0, (n, 1))
    for t in range(config.total_steps):
        x = np.stack([x[k] - config.lr * _grad(config, model, data, k, x[k], t) for k in range(n)])
        if (t + 1) % config.tau == 0:
            group_means = np.stack([x[list(g)].mean(axis=0) for g in groups])
            if (t + 1) % (config.q * config.tau) == 0:
                group_means[:] = group_means.mean(axis=0)
            for gi, g in enumerate(groups):
                x[list(g)] = group_means[gi]
    return x
