"""Loss models with hand-written gradients and the local SGD step.

Every model works on flat float64 parameter vectors.  Data is passed as a
``DeviceDataset`` (features matrix + integer labels); the quadratic model
reads its per-sample targets from the feature rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _xent(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


@dataclass(frozen=True)
class QuadraticModel:
    """``F_k(x) = mean_j 0.5 * ||x - b_{k,j}||^2`` with targets in the feature rows.

    Curvature is the identity, so the smoothness constant is exactly 1 and
    the minimizer of a device objective is the mean of its targets.
    """

    dim: int
    kind: str = "quadratic"

    @property
    def smoothness(self) -> float:
        return 1.0

    def init_params(self, seed: int = 0) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, params, features, labels) -> float:
        diff = features - params
        return float(0.5 * np.mean(np.sum(diff * diff, axis=1)))

    def grad(self, params, features, labels) -> np.ndarray:
        return params - features.mean(axis=0)

    def minimizer(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float).mean(axis=0)


@dataclass(frozen=True)
class LogisticModel:
    """Multinomial logistic regression; params pack ``W`` (classes x features) then bias."""

    n_features: int
    n_classes: int
    kind: str = "logistic"

    @property
    def dim(self) -> int:
        return self.n_classes * (self.n_features + 1)

    @property
    def smoothness(self) -> Optional[float]:
        return None

    def init_params(self, seed: int = 0) -> np.ndarray:
        return np.zeros(self.dim)

    def _unpack(self, params):
        k = self.n_classes * self.n_features
        return params[:k].reshape(self.n_classes, self.n_features), params[k:]

    def predict_proba(self, params, features) -> np.ndarray:
        w, b = self._unpack(params)
        return _softmax(features @ w.T + b)

    def loss(self, params, features, labels) -> float:
        return _xent(self.predict_proba(params, features), labels)

    def grad(self, params, features, labels) -> np.ndarray:
        probs = self.predict_proba(params, features)
        probs[np.arange(len(labels)), labels] -= 1.0
        probs /= len(labels)
        return np.concatenate([(probs.T @ features).ravel(), probs.sum(axis=0)])


@dataclass(frozen=True)
class MLPModel:
    """One hidden tanh layer followed by a softmax output.

    Packing order: ``W1`` (hidden x features), ``b1``, ``W2`` (classes x hidden), ``b2``.
    """

    n_features: int
    n_hidden: int
    n_classes: int
    kind: str = "mlp"

    @property
    def dim(self) -> int:
        h, f, c = self.n_hidden, self.n_features, self.n_classes
        return h * f + h + c * h + c

    @property
    def smoothness(self) -> Optional[float]:
        return None

    def init_params(self, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        h, f, c = self.n_hidden, self.n_features, self.n_classes
        lim1, lim2 = 1.0 / np.sqrt(f), 1.0 / np.sqrt(h)
        return np.concatenate([
            rng.uniform(-lim1, lim1, h * f),
            rng.uniform(-lim1, lim1, h),
            rng.uniform(-lim2, lim2, c * h),
            rng.uniform(-lim2, lim2, c),
        ])

    def _unpack(self, params):
        h, f, c = self.n_hidden, self.n_features, self.n_classes
        i = 0
        w1 = params[i:i + h * f].reshape(h, f); i += h * f
        b1 = params[i:i + h]; i += h
        w2 = params[i:i + c * h].reshape(c, h); i += c * h
        b2 = params[i:i + c]
        return w1, b1, w2, b2

    def _forward(self, params, features):
        w1, b1, w2, b2 = self._unpack(params)
        hidden = np.tanh(features @ w1.T + b1)
        return hidden, _softmax(hidden @ w2.T + b2)

    def predict_proba(self, params, features) -> np.ndarray:
        return self._forward(params, features)[1]

    def loss(self, params, features, labels) -> float:
        return _xent(self.predict_proba(params, features), labels)

    def grad(self, params, features, labels) -> np.ndarray:
        _, _, w2, _ = self._unpack(params)
        hidden, probs = self._forward(params, features)
        delta = probs
        delta[np.arange(len(labels)), labels] -= 1.0
        delta /= len(labels)
        g_w2 = delta.T @ hidden
        g_b2 = delta.sum(axis=0)
        back = (delta @ w2) * (1.0 - hidden * hidden)
        g_w1 = back.T @ features
        g_b1 = back.sum(axis=0)
        return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])


LossModel = QuadraticModel | LogisticModel | MLPModel


@dataclass(frozen=True)
class GradSample:
    gradient: np.ndarray
    batch_ids: np.ndarray
    device_id: int


def _check_dim(model, params):
    if params.ndim != 1 or params.shape[0] != model.dim:
        raise ConfigError(
            f"parameter dimension {params.shape} does not match model dimension {model.dim}")


def full_gradient(model: LossModel, params: np.ndarray, data) -> np.ndarray:
    """Exact mean gradient over every sample the device holds."""
    params = np.asarray(params, dtype=np.float64)
    _check_dim(model, params)
    if len(data) == 0:
        raise ValueError(f"device {data.device_id} has no samples")
    return model.grad(params, data.features, data.labels)


def stoch_gradient(model: LossModel, params: np.ndarray, data,
                   batch: Sequence[int]) -> GradSample:
    params = np.asarray(params, dtype=np.float64)
    _check_dim(model, params)
    idx = np.asarray(batch, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty batch")
    if idx.min() < 0 or idx.max() >= len(data):
        raise IndexError(
            f"batch index out of range for device {data.device_id} with {len(data)} samples")
    g = model.grad(params, data.features[idx], data.labels[idx])
    return GradSample(g, idx, data.device_id)


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float,
             momentum_state: Optional[np.ndarray] = None, momentum: float = 0.0):
    """One local update; returns ``(new_params, new_momentum_state)``.

    With ``momentum > 0`` this is heavy-ball: ``v <- mu*v + g; x <- x - lr*v``.
    A ``None`` state means a zero buffer.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    if params.shape != grad.shape:
        raise ConfigError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if momentum == 0.0:
        return params - lr * grad, momentum_state
    buf = grad.copy() if momentum_state is None else momentum * momentum_state + grad
    return params - lr * buf, buf
