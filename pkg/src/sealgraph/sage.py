"""Self-attentive graph embedding (SAGE), used as the instance-level classifier.

Forward pass for one instance with normalised adjacency Â and features X::

    H   = Â ReLU(Â X W0) W1                       n x v
    S   = softmax_rows(Ws2 tanh(Ws1 H^T))          r x n
    e   = S H                                      r x v, flattened row-major
    psi = softmax(dropout(ReLU(e Wdense)) Wout)    c
    P   = ||S S^T - I_r||_F^2

Minibatches are processed as one block-diagonal sparse Â over the stacked
nodes of all instances, with segment ops standing in for the per-instance
softmax, pooling and penalty.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import numerics as nx
from .errors import ConfigError, DimensionError, UsageError
from .graph import normalize_adjacency

log = logging.getLogger(__name__)

PROFILES = {
    "benchmark": dict(h=128, v=8, d=64, r=16, u=256, dropout=0.5, penalty=0.15),
    "synthetic": dict(h=32, v=4, d=32, r=10, u=48, dropout=0.3, penalty=0.15),
}


@dataclass
class SageParams:
    W0: np.ndarray
    W1: np.ndarray
    Ws1: np.ndarray
    Ws2: np.ndarray
    Wdense: np.ndarray
    Wout: np.ndarray
    dropout_rate: float = 0.3
    penalty_coeff: float = 0.15

    def __post_init__(self):
        phi, h = self.W0.shape
        v = self.W1.shape[1]
        d = self.Ws1.shape[0]
        r = self.Ws2.shape[0]
        u = self.Wdense.shape[1]
        expected = {
            "W1": (h, v), "Ws1": (d, v), "Ws2": (r, d), "Wdense": (r * v, u), "Wout": (u, self.Wout.shape[1]),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if min(phi, h, v, d, r, u, self.Wout.shape[1]) < 1:
            raise ConfigError("all SAGE dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.penalty_coeff < 0:
            raise ConfigError("penalty coefficient must be non-negative")

    @classmethod
    def init(cls, phi, c, rng, h=32, v=4, d=32, r=10, u=48, dropout_rate=0.3, penalty_coeff=0.15):
        return cls(
            W0=nx.he_normal_init(phi, h, rng),
            W1=nx.he_normal_init(h, v, rng),
            Ws1=nx.he_normal_init(v, d, rng).T.copy(),
            Ws2=nx.he_normal_init(d, r, rng).T.copy(),
            Wdense=nx.he_normal_init(r * v, u, rng),
            Wout=nx.he_normal_init(u, c, rng),
            dropout_rate=dropout_rate,
            penalty_coeff=penalty_coeff,
        )

    @property
    def dims(self):
        phi, h = self.W0.shape
        return dict(
            phi=phi, h=h, v=self.W1.shape[1], d=self.Ws1.shape[0], r=self.Ws2.shape[0],
            u=self.Wdense.shape[1], c=self.Wout.shape[1],
        )

    @property
    def embedding_width(self):
        return self.Ws2.shape[0] * self.W1.shape[1]

    def weights(self):
        return [self.W0, self.W1, self.Ws1, self.Ws2, self.Wdense, self.Wout]

    def with_weights(self, ws):
        return SageParams(*[np.array(w) for w in ws], self.dropout_rate, self.penalty_coeff)


@dataclass
class SageOutput:
    H: np.ndarray
    S: np.ndarray
    e: np.ndarray
    psi: np.ndarray
    P: float


@dataclass
class TrainConfig:
    epochs: int = 200
    finetune_epochs: int = 20
    batch_size: int = 32
    lr: float = 0.01

    def __post_init__(self):
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    a_hat: sp.csr_matrix
    ax: np.ndarray
    starts: np.ndarray

    @property
    def size(self):
        return len(self.starts)


class SageData:
    """Per-instance Â and Â X, precomputed once and stacked on demand."""

    def __init__(self, instances):
        self.instances = list(instances)
        self._a_hat = []
        self._ax = []
        for g in self.instances:
            a = normalize_adjacency(sp.csr_matrix(g.adjacency, dtype=np.float64))
            self._a_hat.append(a)
            self._ax.append(np.asarray(a @ g.features))
        self.sizes = np.array([g.n for g in self.instances], dtype=np.int64)

    def __len__(self):
        return len(self.instances)

    @property
    def phi(self):
        return self._ax[0].shape[1]

    def labels(self, ids):
        out = []
        for i in ids:
            y = self.instances[i].label
            if y is None:
                raise UsageError(f"instance {self.instances[i].id} has no label")
            out.append(y)
        return np.array(out, dtype=np.int64)

    def batch(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        sizes = self.sizes[ids]
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        if len(ids) == 1:
            a = self._a_hat[ids[0]]
        else:
            a = _block_diag([self._a_hat[i] for i in ids], starts, int(sizes.sum()))
        ax = np.vstack([self._ax[i] for i in ids])
        return Batch(a, ax, starts)


def _block_diag(blocks, starts, total):
    nnz = np.array([m.nnz for m in blocks])
    base = np.concatenate([[0], np.cumsum(nnz)])
    indices = np.concatenate([m.indices + off for m, off in zip(blocks, starts)])
    indptr = np.concatenate([m.indptr[:-1] + b for m, b in zip(blocks, base[:-1])] + [[base[-1]]])
    data = np.concatenate([m.data for m in blocks])
    return sp.csr_matrix((data, indices, indptr), shape=(total, total))


def _as_data(data):
    return data if isinstance(data, SageData) else SageData(data)


# ---------------------------------------------------------------------------
# forward pass and loss


def _forward(ws, batch, dropout_rate, training, rng):
    W0, W1, Ws1, Ws2, Wd, Wo = ws
    z = nx.relu(nx.matmul(batch.ax, W0))
    h = nx.matmul(batch.a_hat, nx.matmul(z, W1))
    t = nx.tanh(nx.matmul(h, nx.transpose(Ws1)))
    st = nx.segment_softmax(nx.matmul(t, nx.transpose(Ws2)), batch.starts)
    e = nx.segment_weighted_pool(st, h, batch.starts)
    pen = nx.segment_gram_penalty(st, batch.starts)
    hid = nx.dropout(nx.relu(nx.matmul(e, Wd)), dropout_rate, training, rng)
    psi = nx.softmax_rows(nx.matmul(hid, Wo))
    return h, st, e, psi, pen


def sage_forward(params, a_hat, X, training=False, rng=None):
    """Run SAGE on one instance given its normalised adjacency."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.W0.shape[0]:
        raise DimensionError(f"features have shape {X.shape}, expected n x {params.W0.shape[0]}")
    if a_hat.shape != (X.shape[0], X.shape[0]):
        raise DimensionError(f"adjacency shape {a_hat.shape} does not match {X.shape[0]} nodes")
    if training and rng is None:
        raise UsageError("training mode needs an rng for dropout")
    a = sp.csr_matrix(a_hat)
    batch = Batch(a, np.asarray(a @ X), np.array([0]))
    h, st, e, psi, pen = _forward(params.weights(), batch, params.dropout_rate, training, rng)
    r, v = params.Ws2.shape[0], params.W1.shape[1]
    return SageOutput(H=h, S=st.T.copy(), e=e.reshape(r, v), psi=psi[0], P=float(pen[0, 0]))


def _loss_terms(ws, batch, labels, params, training, rng):
    _, _, _, psi, pen = _forward(ws, batch, params.dropout_rate, training, rng)
    ce = nx.cross_entropy_rows(psi, labels)
    return ce, nx.sum_all(pen)


def sage_loss(params, instances, labels=None, training=False, rng=None, weights=None):
    """Summed cross-entropy plus penalty_coeff * P over a labelled batch.

    ``weights`` may be tape tensors, in which case the result is tracked.
    """
    data = _as_data(instances)
    ids = np.arange(len(data))
    labels = data.labels(ids) if labels is None else np.asarray(labels, dtype=np.int64)
    if training and rng is None:
        raise UsageError("training mode needs an rng for dropout")
    ws = params.weights() if weights is None else weights
    ce, pen = _loss_terms(ws, data.batch(ids), labels, params, training, rng)
    return nx.add(ce, nx.scale(pen, params.penalty_coeff))


# ---------------------------------------------------------------------------
# training


@dataclass
class LossHistory:
    total: list = field(default_factory=list)
    cross_entropy: list = field(default_factory=list)


def _fit(params, data, ids, labels, epochs, config, rng):
    ids = np.asarray(ids, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(ids) == 0:
        raise UsageError("cannot train on an empty labelled set")
    if len(labels) != len(ids):
        raise DimensionError(f"{len(labels)} labels for {len(ids)} instances")
    history = LossHistory()
    if epochs == 0:
        return params, history
    weights = [w.copy() for w in params.weights()]
    state = nx.AdamState.for_params(weights, lr=config.lr)
    for _ in range(epochs):
        order = rng.permutation(len(ids))
        tot = ce_tot = 0.0
        for lo in range(0, len(ids), config.batch_size):
            sel = order[lo:lo + config.batch_size]
            batch = data.batch(ids[sel])
            tape = nx.Tape()
            ws = [tape.watch(w) for w in weights]
            ce, pen = _loss_terms(ws, batch, labels[sel], params, True, rng)
            loss = nx.add(ce, nx.scale(pen, params.penalty_coeff))
            grads = tape.backward(loss)
            weights, state = nx.adam_step(weights, grads, state)
            tot += float(loss.value)
            ce_tot += float(ce.value)
        history.total.append(tot / len(ids))
        history.cross_entropy.append(ce_tot / len(ids))
    return params.with_weights(weights), history


def train_ic(params, data, config, rng, ids=None, labels=None):
    """Minibatch Adam on the SAGE loss; returns (params, per-epoch history)."""
    data = _as_data(data)
    ids = np.arange(len(data)) if ids is None else np.asarray(ids, dtype=np.int64)
    labels = data.labels(ids) if labels is None else labels
    return _fit(params, data, ids, labels, config.epochs, config, rng)


def fine_tune_ic(params, data, config, rng, ids=None, labels=None):
    """Continue training from ``params`` for ``config.finetune_epochs`` epochs."""
    data = _as_data(data)
    ids = np.arange(len(data)) if ids is None else np.asarray(ids, dtype=np.int64)
    labels = data.labels(ids) if labels is None else labels
    return _fit(params, data, ids, labels, config.finetune_epochs, config, rng)


@dataclass
class Embedding:
    E: np.ndarray
    Psi: np.ndarray
    attention: list = None


def embed_all(params, data, chunk=256, keep_attention=False):
    """Evaluation-mode embeddings E, class probabilities Psi and optional attention."""
    data = _as_data(data)
    ws = params.weights()
    E, Psi, att = [], [], []
    for lo in range(0, len(data), chunk):
        ids = np.arange(lo, min(lo + chunk, len(data)))
        batch = data.batch(ids)
        _, st, e, psi, _ = _forward(ws, batch, 0.0, False, None)
        E.append(e)
        Psi.append(psi)
        if keep_attention:
            bounds = np.append(batch.starts, st.shape[0])
            att.extend(st[bounds[k]:bounds[k + 1]].T.copy() for k in range(len(ids)))
    if not E:
        return Embedding(np.zeros((0, params.embedding_width)), np.zeros((0, params.Wout.shape[1])),
                         [] if keep_attention else None)
    return Embedding(np.vstack(E), np.vstack(Psi), att if keep_attention else None)


def averaged_attention(S):
    """Mean over the r views, renormalised to sum to one."""
    w = np.asarray(S).mean(axis=0)
    return w / w.sum()
