import numpy as np
import pytest

from sealgraph import numerics as nx
from sealgraph.errors import ConfigError, DimensionError, UsageError
from sealgraph.graph import GraphInstance, normalize_adjacency
from sealgraph.sage import (
    PROFILES,
    SageData,
    SageParams,
    TrainConfig,
    averaged_attention,
    embed_all,
    fine_tune_ic,
    sage_forward,
    sage_loss,
    train_ic,
)

from conftest import random_instance


def small_params(rng, phi=3, c=4, **kw):
    dims = dict(h=8, v=4, d=8, r=3, u=10, dropout_rate=0.0)
    dims.update(kw)
    return SageParams.init(phi, c, rng, **dims)


def reference_forward(p, g):
    """Direct dense evaluation of the instance classifier for one graph."""
    a = normalize_adjacency(g.adjacency.astype(float))
    h = a @ np.maximum(a @ g.features @ p.W0, 0) @ p.W1
    z = p.Ws2 @ np.tanh(p.Ws1 @ h.T)
    s = np.exp(z - z.max(axis=1, keepdims=True))
    s /= s.sum(axis=1, keepdims=True)
    e = s @ h
    logits = np.maximum(e.reshape(1, -1) @ p.Wdense, 0) @ p.Wout
    psi = np.exp(logits - logits.max())
    psi /= psi.sum()
    pen = ((s @ s.T - np.eye(s.shape[0])) ** 2).sum()
    return h, s, e, psi.ravel(), pen


def test_profiles():
    assert PROFILES["benchmark"] == dict(h=128, v=8, d=64, r=16, u=256, dropout=0.5, penalty=0.15)
    assert PROFILES["synthetic"] == dict(h=32, v=4, d=32, r=10, u=48, dropout=0.3, penalty=0.15)


def test_param_shapes(rng):
    p = SageParams.init(3, 7, rng)
    assert p.W0.shape == (3, 32) and p.W1.shape == (32, 4)
    assert p.Ws1.shape == (32, 4) and p.Ws2.shape == (10, 32)
    assert p.Wdense.shape == (40, 48) and p.Wout.shape == (48, 7)
    with pytest.raises(DimensionError):
        SageParams(p.W0, p.W1, p.Ws1, p.Ws2, p.Wdense[:5], p.Wout)
    with pytest.raises(ConfigError):
        SageParams.init(3, 7, rng, dropout_rate=1.0)


def test_forward_matches_dense_reference(rng):
    p = small_params(rng)
    for n in (1, 4, 9):
        g = random_instance(rng, n)
        out = sage_forward(p, normalize_adjacency(g.adjacency), g.features)
        h, s, e, psi, pen = reference_forward(p, g)
        assert np.allclose(out.H, h) and np.allclose(out.S, s) and np.allclose(out.e, e)
        assert np.allclose(out.psi, psi) and out.P == pytest.approx(pen)


@pytest.mark.parametrize("n", [5, 50, 500])
def test_size_invariance(rng, n):
    p = small_params(rng)
    g = random_instance(rng, n, p=min(0.5, 4 / n))
    out = sage_forward(p, normalize_adjacency(g.adjacency), g.features)
    assert out.e.shape == (3, 4) and out.S.shape == (3, n)
    assert np.allclose(out.S.sum(axis=1), 1, atol=1e-9)


def test_permutation_invariance(rng):
    p = small_params(rng)
    g = random_instance(rng, 12)
    perm = rng.permutation(12)
    a2 = g.adjacency[np.ix_(perm, perm)]
    x2 = g.features[perm]
    o1 = sage_forward(p, normalize_adjacency(g.adjacency), g.features)
    o2 = sage_forward(p, normalize_adjacency(a2), x2)
    assert np.allclose(o1.e, o2.e, atol=1e-9) and np.allclose(o1.psi, o2.psi, atol=1e-9)
    assert abs(o1.P - o2.P) < 1e-9


def test_single_view_with_identical_rows_is_mean_pool(rng):
    p = small_params(rng, r=1)
    n = 5
    a = np.ones((n, n), dtype=np.uint8) - np.eye(n, dtype=np.uint8)
    out = sage_forward(p, normalize_adjacency(a), np.ones((n, 3)))
    assert np.allclose(out.e[0], out.H.mean(axis=0))


def test_forward_errors(rng):
    p = small_params(rng)
    g = random_instance(rng, 4, phi=2)
    with pytest.raises(DimensionError):
        sage_forward(p, normalize_adjacency(g.adjacency), g.features)


def test_loss_is_ce_plus_penalty(rng):
    p = small_params(rng, penalty_coeff=0.3)
    gs = [random_instance(rng, n, label=k % 4) for k, n in enumerate((4, 6, 7))]
    refs = [reference_forward(p, g) for g in gs]
    ce = sum(-np.log(r[3][g.label]) for r, g in zip(refs, gs))
    pen = sum(r[4] for r in refs)
    assert float(sage_loss(p, gs)) == pytest.approx(ce + 0.3 * pen)
    p0 = SageParams(*p.weights(), dropout_rate=0.0, penalty_coeff=0.0)
    assert float(sage_loss(p0, gs)) == pytest.approx(ce)


def test_loss_requires_labels(rng):
    p = small_params(rng)
    with pytest.raises(UsageError):
        sage_loss(p, [random_instance(rng, 4)])


def test_loss_gradient_finite_differences(rng):
    p = small_params(rng, c=7, u=48)
    gs = [random_instance(rng, n, label=k) for k, n in enumerate((6, 4))]
    data = SageData(gs)
    err = nx.finite_diff_check(lambda ws: sage_loss(p, data, weights=ws), p.weights())
    assert err < 1e-4


def _toy_set(rng, count=40):
    gs = []
    for k in range(count):
        label = k % 2
        n = int(rng.integers(6, 12))
        # class 0: sparse random graph, class 1: dense random graph
        gs.append(random_instance(rng, n, p=0.15 if label == 0 else 0.7, label=label))
    for g in gs:
        deg = g.adjacency.sum(axis=1)
        g.features = np.stack([deg / g.n, np.ones(g.n), np.zeros(g.n)], axis=1)
    return gs


def test_training_reduces_loss_and_is_deterministic(rng):
    gs = _toy_set(rng)
    p = small_params(np.random.default_rng(0), c=2)
    cfg = TrainConfig(epochs=5, batch_size=8)
    p1, h1 = train_ic(p, gs, cfg, np.random.default_rng(1))
    p2, h2 = train_ic(p, gs, cfg, np.random.default_rng(1))
    assert all(a < b for a, b in zip(h1.cross_entropy[1:], h1.cross_entropy[:-1]))
    assert all(np.array_equal(a, b) for a, b in zip(p1.weights(), p2.weights()))
    assert h1.total == h2.total


def test_zero_epochs_and_empty_set(rng):
    gs = _toy_set(rng, 4)
    p = small_params(rng, c=2)
    same, hist = train_ic(p, gs, TrainConfig(epochs=0), rng)
    assert same is p and hist.total == []
    tuned, _ = fine_tune_ic(p, gs, TrainConfig(finetune_epochs=0), rng)
    assert tuned is p
    with pytest.raises(UsageError):
        train_ic(p, gs, TrainConfig(epochs=1), rng, ids=[])


def test_fine_tune_does_not_increase_loss(rng):
    gs = _toy_set(rng)
    p = small_params(rng, c=2)
    p, _ = train_ic(p, gs, TrainConfig(epochs=30, batch_size=8), np.random.default_rng(2))
    before = float(sage_loss(p, gs))
    tuned, _ = fine_tune_ic(p, gs, TrainConfig(finetune_epochs=5, batch_size=8, lr=0.001),
                            np.random.default_rng(3))
    assert float(sage_loss(tuned, gs)) <= before + 1e-6


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_embed_all_rows_and_isomorphic_instances(rng):
    p = small_params(rng)
    g = random_instance(rng, 8, label=1)
    perm = rng.permutation(8)
    twin = GraphInstance("twin", g.adjacency[np.ix_(perm, perm)], g.features[perm], 1)
    gs = [g, random_instance(rng, 5), twin]
    emb = embed_all(p, gs, chunk=2, keep_attention=True)
    assert emb.E.shape == (3, 12) and emb.Psi.shape == (3, 4)
    assert np.allclose(emb.Psi.sum(axis=1), 1, atol=1e-9)
    assert np.allclose(emb.E[0], emb.E[2], atol=1e-9)
    assert emb.attention[1].shape == (3, 5)
    single = sage_forward(p, normalize_adjacency(g.adjacency), g.features)
    assert np.allclose(emb.attention[0], single.S)


def test_batched_and_single_forward_agree(rng):
    p = small_params(rng)
    gs = [random_instance(rng, int(n)) for n in rng.integers(1, 15, 10)]
    emb = embed_all(p, gs)
    for k, g in enumerate(gs):
        out = sage_forward(p, normalize_adjacency(g.adjacency), g.features)
        assert np.allclose(emb.E[k], out.e.ravel()) and np.allclose(emb.Psi[k], out.psi)


def test_averaged_attention_sums_to_one(rng):
    s = rng.dirichlet(np.ones(6), size=4)
    w = averaged_attention(s)
    assert w.shape == (6,) and w.sum() == pytest.approx(1.0)
