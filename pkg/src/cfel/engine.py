"""Training loop for CE-FedAvg and its baselines, plus the matrix-form oracle.

Time indexing: ``t = l*q*tau + r*tau + s`` counts local SGD steps.  Device
parameters observed at step ``t`` are those *before* the ``t``-th update,
with any aggregation that closed step ``t - 1`` already broadcast.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .costmodel import SystemProfile, round_time
from .errors import ConfigError, DivergenceError
from .layout import ClusterLayout
from .numerics import stoch_gradient, sgd_step
from .topology import MixingMatrix, gossip_power

ALGORITHMS = ("ce_fedavg", "fedavg", "hier_favg", "local_edge")
DIVERGENCE_LIMIT = 1e8


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "ce_fedavg"
    tau: int = 2
    q: int = 8
    pi: int = 10
    lr: float = 0.05
    rounds: int = 10
    batch_size: Optional[int] = 10
    momentum: float = 0.0
    weighting: str = "uniform"
    tau_unit: str = "iterations"
    seed: int = 0
    grad_noise: float = 0.0   # variance of injected isotropic gradient noise

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        for name in ("tau", "q", "pi", "rounds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weighting not in ("uniform", "sample_size"):
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        if self.tau_unit not in ("iterations", "epochs"):
            raise ConfigError(f"unknown tau_unit {self.tau_unit!r}")
        if self.grad_noise < 0:
            raise ConfigError("grad_noise is a variance and must be >= 0")

    @property
    def total_steps(self) -> int:
        return self.rounds * self.q * self.tau


@dataclass(frozen=True)
class RoundRecord:
    round: int
    t: int
    wall_sim_seconds: float
    global_loss: float
    test_accuracy: float
    grad_norm_sq: float
    spread: float

    FIELDS = ("round", "t", "wall_sim_seconds", "global_loss", "test_accuracy", "grad_norm_sq", "spread")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}


@dataclass
class FleetState:
    device_params: np.ndarray          # n x d
    edge_params: np.ndarray            # m x d
    momentum: list
    t: int = 0


@dataclass
class RunResult:
    records: list[RoundRecord]
    state: FleetState
    round_models: list = field(default_factory=list)   # averaged model after each round

    @property
    def averaged_model(self) -> np.ndarray:
        return self.state.device_params.mean(axis=0)


# -- aggregation -------------------------------------------------------------

def intra_aggregate(params: Sequence[np.ndarray], weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Weighted mean accumulated in the given (ascending device) order."""
    if len(params) == 0:
        raise ValueError("cannot aggregate an empty cluster")
    if weights is None:
        weights = [1.0] * len(params)
    acc = np.zeros_like(params[0], dtype=np.float64)
    for w, x in zip(weights, params):
        acc += w * x
    return acc / float(sum(weights))


def inter_aggregate(edge_params: np.ndarray, mixing_power: np.ndarray) -> np.ndarray:
    """``y_new[i] = sum_j P[j, i] * y[j]`` for the precomputed gossip power ``P``."""
    return mixing_power.T @ edge_params


def _events(algorithm: str, q: int) -> list[str]:
    """Aggregation performed at the end of each edge round of a global round."""
    if algorithm == "ce_fedavg":
        return ["intra"] * (q - 1) + ["gossip"]
    if algorithm == "fedavg":
        return ["none"] * (q - 1) + ["global"]
    if algorithm == "hier_favg":
        return ["intra"] * (q - 1) + ["global"]
    return ["intra"] * q


def _weights(config: RunConfig, data) -> list[float]:
    if config.weighting == "sample_size":
        return [float(len(d)) for d in data]
    return [1.0] * len(data)


def _check_inputs(config: RunConfig, layout: ClusterLayout, mixing, model, data):
    if len(data) != layout.n:
        raise ConfigError(f"layout has {layout.n} devices but {len(data)} datasets were given")
    if config.algorithm == "ce_fedavg":
        if mixing is None:
            raise ConfigError("ce_fedavg needs a mixing matrix")
        size = _mixing_entries(mixing).shape[0]
        if size != layout.m:
            raise ConfigError(f"mixing matrix is {size}x{size} but layout has {layout.m} clusters")
    for k, d in enumerate(data):
        if len(d) == 0:
            raise ConfigError(f"device {k} has no data")


def _mixing_entries(mixing):
    return mixing.entries if isinstance(mixing, MixingMatrix) else np.asarray(mixing, dtype=np.float64)


# -- evaluation --------------------------------------------------------------

def global_objective(model, params: np.ndarray, data) -> tuple[float, np.ndarray]:
    """``F(x) = (1/n) sum_k F_k(x)`` and its gradient."""
    loss = 0.0
    grad = np.zeros_like(params)
    for d in data:
        loss += model.loss(params, d.features, d.labels)
        grad += model.grad(params, d.features, d.labels)
    return loss / len(data), grad / len(data)


def accuracy(model, params, test) -> float:
    if test is None or not hasattr(model, "predict_proba") or len(test) == 0:
        return math.nan
    pred = np.argmax(model.predict_proba(params, test.features), axis=1)
    return float(np.mean(pred == test.labels))


# -- main loop ---------------------------------------------------------------

def run(config: RunConfig, layout: ClusterLayout, mixing, model, data, *,
        init: Optional[np.ndarray] = None, test=None, profile: Optional[SystemProfile] = None,
        threads: int = 1, on_step: Optional[Callable[[int, np.ndarray], None]] = None) -> RunResult:
    """Execute ``config.rounds`` global rounds; one RoundRecord per round.

    ``on_step(t, X)`` receives the n x d device matrix before every local
    step and once more after the last round (``t = T``).  It requires
    ``tau_unit='iterations'``.
    """
    _check_inputs(config, layout, mixing, model, data)
    if on_step is not None and config.tau_unit != "iterations":
        raise ConfigError("per-step observation needs tau_unit='iterations'")
    n, m = layout.n, layout.m
    x0 = model.init_params(config.seed) if init is None else np.asarray(init, dtype=np.float64)
    if x0.shape != (model.dim,):
        raise ConfigError(f"initial parameters have shape {x0.shape}, expected ({model.dim},)")
    mix_pow = gossip_power(_mixing_entries(mixing), config.pi) if config.algorithm == "ce_fedavg" else None
    weights = _weights(config, data)
    events = _events(config.algorithm, config.q)
    tau = config.tau

    if config.tau_unit == "epochs":
        bs = config.batch_size or max(len(d) for d in data)
        steps_per_phase = tau * max(math.ceil(len(d) / bs) for d in data)
    else:
        steps_per_phase = tau
    seconds = round_time(config.algorithm, profile, steps_per_phase, config.q, config.pi) if profile else 0.0

    state = FleetState(np.tile(x0, (n, 1)), np.tile(x0, (m, 1)), [None] * n)

    def local_phase(k: int, x: np.ndarray, buf, l: int, r: int, t0: int):
        d = data[k]
        trace = [] if on_step is not None else None
        if config.tau_unit == "iterations":
            batches = [rng.sample_batch(config.seed, k, t0 + s, len(d), config.batch_size) for s in range(tau)]
        else:
            bs = config.batch_size or len(d)
            batches = []
            for e in range(tau):
                order = rng.epoch_order(config.seed, k, (l * config.q + r) * tau + e, len(d))
                batches.extend(order[i:i + bs] for i in range(0, len(d), bs))
        for s, batch in enumerate(batches):
            if trace is not None:
                trace.append(x)
            g = stoch_gradient(model, x, d, batch).gradient
            if config.grad_noise > 0:
                g = g + rng.gaussian_noise(config.seed, k, t0 + s, g.shape[0], config.grad_noise)
            x, buf = sgd_step(x, g, config.lr, buf, config.momentum)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
                raise DivergenceError(l, r, s, k)
        return x, buf, trace

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    records, round_models = [], []
    try:
        for l in range(config.rounds):
            for r in range(config.q):
                t0 = state.t
                args = [(k, state.device_params[k], state.momentum[k], l, r, t0) for k in range(n)]
                if pool is None:
                    results = [local_phase(*a) for a in args]
                else:
                    results = [f.result() for f in [pool.submit(local_phase, *a) for a in args]]
                if on_step is not None:
                    for s in range(tau):
                        on_step(t0 + s, np.stack([res[2][s] for res in results]))
                for k, (x, buf, _) in enumerate(results):
                    state.device_params[k] = x
                    state.momentum[k] = buf
                state.t += tau

                event = events[r]
                if event == "none":
                    continue
                if event == "global":
                    y = intra_aggregate([state.device_params[k] for k in range(n)], weights)
                    state.edge_params[:] = y
                else:
                    for i, members in enumerate(layout.members):
                        state.edge_params[i] = intra_aggregate(
                            [state.device_params[k] for k in members], [weights[k] for k in members])
                    if event == "gossip":
                        state.edge_params = inter_aggregate(state.edge_params, mix_pow)
                # broadcast; momentum buffers are device-local and restart here
                for k in range(n):
                    state.device_params[k] = state.edge_params[layout.assignment[k]]
                    state.momentum[k] = None
            records.append(_record(l, state, model, data, test, seconds))
            round_models.append(state.device_params.mean(axis=0))
    finally:
        if pool is not None:
            pool.shutdown()
    if on_step is not None:
        on_step(state.t, state.device_params.copy())
    return RunResult(records, state, round_models)


def _record(l, state, model, data, test, seconds) -> RoundRecord:
    u = state.device_params.mean(axis=0)
    loss, grad = global_objective(model, u, data)
    ybar = state.edge_params.mean(axis=0)
    spread = float(np.max(np.linalg.norm(state.edge_params - ybar, axis=1)))
    acc = float(np.mean([accuracy(model, y, test) for y in state.edge_params])) if test is not None else math.nan
    return RoundRecord(l + 1, state.t, (l + 1) * seconds, loss, acc, float(grad @ grad), spread)


# -- matrix-form oracle ------------------------------------------------------

def operator_schedule(t: int, tau: int, q: int) -> str:
    """Which aggregation operator multiplies the update at step ``t`` (0-based)."""
    if (t + 1) % (q * tau) == 0:
        return "Z"
    if (t + 1) % tau == 0:
        return "V"
    return "I"


def aggregation_operators(layout: ClusterLayout, mixing_power: np.ndarray):
    """``B`` (m x n membership), ``C`` (n x m averaging), ``V = C B`` and ``Z = C P B``."""
    n, m = layout.n, layout.m
    b = np.zeros((m, n))
    c = np.zeros((n, m))
    for k, i in enumerate(layout.assignment):
        b[i, k] = 1.0
        c[k, i] = 1.0 / layout.sizes[i]
    return b, c, c @ b, c @ mixing_power @ b


@dataclass
class OracleTrace:
    params: list = field(default_factory=list)     # X_t as n x d, t = 0..T
    grads: list = field(default_factory=list)      # G_t as n x d, t = 0..T-1
    operators: list = field(default_factory=list)


def run_matrix_oracle(config: RunConfig, layout: ClusterLayout, mixing, model, data, *,
                      init: Optional[np.ndarray] = None) -> OracleTrace:
    """Evolve ``X_{t+1} = (X_t - lr*G_t) W_t`` with explicit n x n operators.

    Columns of ``X`` are device models.  Batches and injected noise replay
    the engine's streams exactly.
    """
    if config.algorithm != "ce_fedavg":
        raise ConfigError("the matrix oracle covers ce_fedavg only")
    if config.momentum != 0.0 or config.weighting != "uniform" or config.tau_unit != "iterations":
        raise ConfigError("the matrix oracle needs plain SGD, uniform weighting and tau in iterations")
    _check_inputs(config, layout, mixing, model, data)
    x0 = model.init_params(config.seed) if init is None else np.asarray(init, dtype=np.float64)
    _, _, v, z = aggregation_operators(layout, gossip_power(_mixing_entries(mixing), config.pi))
    ops = {"I": np.eye(layout.n), "V": v, "Z": z}
    x = np.tile(x0[:, None], (1, layout.n))
    trace = OracleTrace()
    for t in range(config.total_steps):
        trace.params.append(x.T.copy())
        g = np.empty_like(x)
        for k in range(layout.n):
            batch = rng.sample_batch(config.seed, k, t, len(data[k]), config.batch_size)
            gk = stoch_gradient(model, x[:, k], data[k], batch).gradient
            if config.grad_noise > 0:
                gk = gk + rng.gaussian_noise(config.seed, k, t, gk.shape[0], config.grad_noise)
            g[:, k] = gk
        trace.grads.append(g.T.copy())
        label = operator_schedule(t, config.tau, config.q)
        trace.operators.append(label)
        x = (x - config.lr * g) @ ops[label]
    trace.params.append(x.T.copy())
    return trace
