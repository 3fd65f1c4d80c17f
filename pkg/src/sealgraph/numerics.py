"""Dense float64 matrix arithmetic with a small reverse-mode tape.

Every op accepts either plain ``numpy`` arrays or :class:`Tensor` handles
recorded on a :class:`Tape`.  With plain arrays an op is a pure forward
computation and returns an array; as soon as one operand is a tensor the
result is recorded so that :func:`backward` can replay it.  Model code is
therefore written once and used both for training and for inference.

Constant left operands of :func:`matmul` may be ``scipy.sparse`` matrices;
they never receive gradients.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DimensionError, UsageError

PROB_FLOOR = 1e-12
DTYPE = np.float64


class Tensor:
    """Handle to a value recorded on a tape."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, index={self.index})"


class Tape:
    """Ordered record of ops; consumed by exactly one backward pass."""

    def __init__(self):
        self._nodes = []
        self.watched = []
        self.consumed = False

    def __len__(self):
        return len(self._nodes)

    def watch(self, value):
        if self.consumed:
            raise UsageError("tape already consumed by a backward pass")
        t = Tensor(np.array(value, dtype=DTYPE), self, len(self._nodes))
        self._nodes.append(((), None))
        self.watched.append(t)
        return t

    def record(self, value, parents, backward_fn):
        if self.consumed:
            raise UsageError("tape already consumed by a backward pass")
        t = Tensor(value, self, len(self._nodes))
        self._nodes.append((parents, backward_fn))
        return t

    def backward(self, loss):
        """Gradients of scalar ``loss`` for every watched tensor, in watch order."""
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise UsageError("loss was not produced on this tape")
        if loss.value.size != 1:
            raise UsageError(f"loss must be scalar, got shape {loss.value.shape}")
        if self.consumed:
            raise UsageError("tape already consumed by a backward pass")
        self.consumed = True

        grads = [None] * len(self._nodes)
        grads[loss.index] = np.ones_like(loss.value)
        watched = {w.index for w in self.watched}
        for i in range(loss.index, -1, -1):
            g = grads[i]
            parents, fn = self._nodes[i]
            if g is None or fn is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or not isinstance(p, Tensor):
                    continue
                j = p.index
                grads[j] = pg if grads[j] is None else grads[j] + pg
            if i not in watched:
                grads[i] = None
        out = []
        for w in self.watched:
            g = grads[w.index]
            out.append(np.zeros_like(w.value) if g is None else np.asarray(g, dtype=DTYPE))
        self._nodes = []
        return out


def backward(tape, loss):
    """Replay ``tape`` from ``loss``; returns one gradient per watched tensor."""
    return tape.backward(loss)


def value_of(x):
    return x.value if isinstance(x, Tensor) else x


def _record(value, parents, backward_fn):
    tape = None
    for p in parents:
        if isinstance(p, Tensor):
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise UsageError("operands recorded on different tapes")
    if tape is None:
        return value
    return tape.record(value, parents, backward_fn)


def _tracked(x):
    return isinstance(x, Tensor)


# ---------------------------------------------------------------------------
# elementary ops


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"cannot multiply {av.shape} by {bv.shape}")
    if _tracked(a) and sp.issparse(av):
        raise UsageError("sparse operands must be constants")
    out = np.asarray(av @ bv, dtype=DTYPE)

    def grad(g):
        ga = g @ bv.T if _tracked(a) else None
        gb = np.asarray(av.T @ g) if _tracked(b) else None
        return ga, gb

    return _record(out, (a, b), grad)


def add(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise DimensionError(f"cannot add {av.shape} and {bv.shape}")
    return _record(av + bv, (a, b), lambda g: (g, g))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise DimensionError(f"cannot subtract {bv.shape} from {av.shape}")
    return _record(av - bv, (a, b), lambda g: (g, -g))


def scale(a, c):
    c = float(c)
    return _record(value_of(a) * c, (a,), lambda g: (g * c,))


def mul_const(a, m):
    """Elementwise product with a constant array of the same shape."""
    av = value_of(a)
    if av.shape != m.shape:
        raise DimensionError(f"cannot multiply {av.shape} by {m.shape} elementwise")
    return _record(av * m, (a,), lambda g: (g * m,))


def relu(a):
    av = value_of(a)
    mask = av > 0
    return _record(np.maximum(av, 0.0), (a,), lambda g: (g * mask,))


def tanh(a):
    out = np.tanh(value_of(a))
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def transpose(a):
    return _record(value_of(a).T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape):
    av = value_of(a)
    return _record(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def take_rows(a, ids):
    av = value_of(a)
    ids = np.asarray(ids, dtype=np.int64)

    def grad(g):
        out = np.zeros_like(av)
        np.add.at(out, ids, g)
        return (out,)

    return _record(av[ids], (a,), grad)


def softmax_rows(m):
    mv = value_of(m)
    if not np.all(np.isfinite(mv)):
        raise FloatingPointError("softmax_rows received non-finite input")
    z = mv - mv.max(axis=1, keepdims=True)
    ez = np.exp(z)
    out = ez / ez.sum(axis=1, keepdims=True)

    def grad(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _record(out, (m,), grad)


def sum_all(a):
    av = value_of(a)
    return _record(np.asarray(av.sum()), (a,), lambda g: (np.full(av.shape, float(g)),))


def frobenius_norm_sq(m):
    mv = value_of(m)
    return _record(np.asarray((mv * mv).sum()), (m,), lambda g: (2.0 * float(g) * mv,))


def dropout(m, rate, training, rng):
    """Inverted dropout; identity outside training mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return m
    keep = rng.random(value_of(m).shape) >= rate
    return mul_const(m, keep / (1.0 - rate))


# ---------------------------------------------------------------------------
# losses


def cross_entropy(pred, label, c=None):
    """-log pred[label] for a single probability row (plain arrays)."""
    pred = np.asarray(pred, dtype=DTYPE).ravel()
    c = pred.size if c is None else c
    if pred.size != c:
        raise DimensionError(f"prediction has {pred.size} entries, expected {c}")
    if not 0 <= label < c:
        raise IndexError(f"label {label} out of range for {c} classes")
    return float(-np.log(max(pred[label], PROB_FLOOR)))


def cross_entropy_rows(probs, labels):
    """Sum over rows of -log probs[i, labels[i]] (tracked)."""
    pv = value_of(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (pv.shape[0],):
        raise DimensionError(f"{labels.shape[0]} labels for {pv.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= pv.shape[1]):
        raise IndexError(f"label out of range for {pv.shape[1]} classes")
    rows = np.arange(pv.shape[0])
    picked = pv[rows, labels]
    clamped = np.maximum(picked, PROB_FLOOR)

    def grad(g):
        out = np.zeros_like(pv)
        out[rows, labels] = np.where(picked > PROB_FLOOR, -float(g) / clamped, 0.0)
        return (out,)

    return _record(np.asarray(-np.log(clamped).sum()), (probs,), grad)


def kl_rows(p, q):
    """Row-wise KL(p_i || q_i) with 0 ln 0 = 0 and q floored at 1e-12."""
    p = np.asarray(p, dtype=DTYPE)
    q = np.asarray(q, dtype=DTYPE)
    if p.shape != q.shape:
        raise DimensionError(f"cannot compare distributions of shapes {p.shape} and {q.shape}")
    qc = np.maximum(q, PROB_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(qc)), 0.0)
    return terms.sum(axis=-1)


def kl_divergence(p, q):
    p = np.asarray(p, dtype=DTYPE).ravel()
    q = np.asarray(q, dtype=DTYPE).ravel()
    if p.shape != q.shape:
        raise DimensionError(f"length mismatch: {p.size} vs {q.size}")
    return float(kl_rows(p, q))


# ---------------------------------------------------------------------------
# segmented ops: rows of an N-row matrix grouped into consecutive segments
# (one per graph instance) given by their start offsets.


def segment_ids(starts, total):
    counts = np.diff(np.append(starts, total))
    return np.repeat(np.arange(len(starts)), counts)


def segment_softmax(x, starts):
    """Softmax down each column, separately within every row segment."""
    xv = value_of(x)
    starts = np.asarray(starts)
    seg = segment_ids(starts, xv.shape[0])
    mx = np.maximum.reduceat(xv, starts, axis=0)
    ez = np.exp(xv - mx[seg])
    out = ez / np.add.reduceat(ez, starts, axis=0)[seg]

    def grad(g):
        inner = np.add.reduceat(g * out, starts, axis=0)[seg]
        return (out * (g - inner),)

    return _record(out, (x,), grad)


def _padding(starts, total):
    seg = segment_ids(starts, total)
    pos = np.arange(total) - np.asarray(starts)[seg]
    width = int(pos.max()) + 1 if total else 0
    return seg, pos, width


def _pad(x, seg, pos, count, width):
    out = np.zeros((count, width, x.shape[1]))
    out[seg, pos] = x
    return out


def segment_weighted_pool(s, h, starts):
    """Per segment b: the r x v product S_b^T H_b, flattened row-major.

    ``s`` is N x r (column j of a segment holds view j's weights over its
    rows), ``h`` is N x v.  Returns a B x (r*v) matrix.
    """
    sv, hv = value_of(s), value_of(h)
    if sv.shape[0] != hv.shape[0]:
        raise DimensionError(f"cannot pool {sv.shape} weights over {hv.shape} rows")
    b = len(starts)
    r, v = sv.shape[1], hv.shape[1]
    seg, pos, width = _padding(starts, sv.shape[0])
    ps = _pad(sv, seg, pos, b, width)
    ph = _pad(hv, seg, pos, b, width)
    out = np.matmul(ps.transpose(0, 2, 1), ph).reshape(b, r * v)

    def grad(g):
        g3 = g.reshape(b, r, v)
        gs = np.matmul(ph, g3.transpose(0, 2, 1))[seg, pos] if _tracked(s) else None
        gh = np.matmul(ps, g3)[seg, pos] if _tracked(h) else None
        return gs, gh

    return _record(out, (s, h), grad)


def segment_gram_penalty(s, starts):
    """Per segment b: ||S_b^T S_b - I_r||_F^2 as a B x 1 column."""
    sv = value_of(s)
    b, r = len(starts), sv.shape[1]
    seg, pos, width = _padding(starts, sv.shape[0])
    ps = _pad(sv, seg, pos, b, width)
    resid = np.matmul(ps.transpose(0, 2, 1), ps) - np.eye(r)[None]
    out = (resid * resid).sum(axis=(1, 2)).reshape(-1, 1)

    def grad(g):
        w = 4.0 * g.reshape(-1)[:, None, None] * resid
        return (np.matmul(ps, w)[seg, pos],)

    return _record(out, (s,), grad)


# ---------------------------------------------------------------------------
# initialisation, randomness, optimisation


def make_rng(seed, *keys):
    """PCG64 stream for ``seed``; extra keys (ints or strings) derive independent substreams."""
    if keys:
        words = [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
        return np.random.default_rng(np.random.SeedSequence([int(seed), *words]))
    return np.random.default_rng(int(seed))


def he_normal_init(rows, cols, rng):
    return rng.normal(0.0, np.sqrt(2.0 / rows), size=(rows, cols))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params, grads, state):
    """One bias-corrected Adam update; returns (new params, new state).

    Neither the parameters nor the incoming state are modified.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("parameter, gradient and state counts differ")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shapes differ: param {p.shape}, grad {g.shape}, state {m.shape}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        ms.append(m)
        vs.append(v)
    return new, replace(state, m=ms, v=vs, t=t)


def finite_diff_check(f, params, step=1e-5):
    """Max relative error between tape gradients and central differences.

    ``f`` maps a list of parameters (arrays or tensors) to a scalar and must be
    deterministic.  Relative error uses the denominator max(|a|, |b|, 1e-8).
    """
    params = [np.array(p, dtype=DTYPE) for p in params]
    tape = Tape()
    watched = [tape.watch(p) for p in params]
    analytic = tape.backward(f(watched))

    worst = 0.0
    for i, p in enumerate(params):
        for j in range(p.size):
            args = list(params)
            plus, minus = p.copy(), p.copy()
            plus.flat[j] += step
            minus.flat[j] -= step
            args[i] = plus
            fp = float(value_of(f(args)))
            args[i] = minus
            fm = float(value_of(f(args)))
            numeric = (fp - fm) / (2.0 * step)
            a = float(analytic[i].flat[j])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
