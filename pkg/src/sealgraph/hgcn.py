"""Two-layer GCN over instance embeddings: the hierarchical-level classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError, UsageError


@dataclass
class HcParams:
    W0: np.ndarray  # (r*v) x M
    W1: np.ndarray  # M x c

    def __post_init__(self):
        if self.W0.shape[1] != self.W1.shape[0]:
            raise DimensionError(f"W0 {self.W0.shape} and W1 {self.W1.shape} do not chain")
        if self.W0.shape[1] < 1:
            raise ConfigError("HC needs at least one hidden feature map")

    @classmethod
    def init(cls, width, c, rng, hidden=16):
        return cls(nx.he_normal_init(width, hidden, rng), nx.he_normal_init(hidden, c, rng))

    def weights(self):
        return [self.W0, self.W1]

    def with_weights(self, ws):
        return HcParams(np.array(ws[0]), np.array(ws[1]))


@dataclass
class HcConfig:
    epochs: int = 100
    lr: float = 0.01
    hidden: int = 16
    fine_tune: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("HC epochs must be non-negative")
        if self.lr <= 0:
            raise ConfigError("HC learning rate must be positive")
        if self.hidden < 1:
            raise ConfigError("HC hidden width must be positive")


def _forward(ws, E, theta_hat):
    W0, W1 = ws
    z = nx.relu(nx.matmul(theta_hat, nx.matmul(E, W0)))
    return nx.softmax_rows(nx.matmul(theta_hat, nx.matmul(z, W1)))


def hc_forward(params, E, theta_hat):
    """Gamma = softmax_rows(Θ̂ ReLU(Θ̂ E W0) W1)."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[1] != params.W0.shape[0]:
        raise DimensionError(f"embeddings have shape {E.shape}, expected N x {params.W0.shape[0]}")
    if theta_hat.shape != (E.shape[0], E.shape[0]):
        raise DimensionError(f"Θ̂ shape {theta_hat.shape} does not match {E.shape[0]} instances")
    return _forward(params.weights(), E, theta_hat)


def hc_loss(params, E, theta_hat, labeled_ids, labels, weights=None):
    """Summed cross-entropy of Gamma over the labelled rows."""
    labeled_ids = np.asarray(labeled_ids, dtype=np.int64)
    if labeled_ids.size == 0:
        raise UsageError("HC loss needs at least one labelled instance")
    E = np.asarray(E, dtype=np.float64)
    if theta_hat.shape != (E.shape[0], E.shape[0]):
        raise DimensionError(f"Θ̂ shape {theta_hat.shape} does not match {E.shape[0]} instances")
    ws = params.weights() if weights is None else weights
    gamma = _forward(ws, E, theta_hat)
    return nx.cross_entropy_rows(nx.take_rows(gamma, labeled_ids), labels)


def train_hc(params, E, theta_hat, labeled_ids, labels, config, rng=None):
    """Full-batch Adam on hc_loss; returns (params, per-epoch loss)."""
    labeled_ids = np.asarray(labeled_ids, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labeled_ids.size == 0:
        raise UsageError("HC training needs at least one labelled instance")
    if labels.shape != labeled_ids.shape:
        raise DimensionError(f"{labels.size} labels for {labeled_ids.size} instances")
    history = []
    if config.epochs == 0:
        return params, history
    E = np.asarray(E, dtype=np.float64)
    weights = [w.copy() for w in params.weights()]
    state = nx.AdamState.for_params(weights, lr=config.lr)
    for _ in range(config.epochs):
        tape = nx.Tape()
        ws = [tape.watch(w) for w in weights]
        loss = hc_loss(params, E, theta_hat, labeled_ids, labels, weights=ws)
        grads = tape.backward(loss)
        weights, state = nx.adam_step(weights, grads, state)
        history.append(float(loss.value))
    return params.with_weights(weights), history
