import numpy as np
import pytest
import scipy.sparse as sp

from sealgraph import numerics as nx
from sealgraph.errors import ConfigError, DimensionError, UsageError
from sealgraph.hgcn import HcConfig, HcParams, hc_forward, hc_loss, train_hc


def ring_theta(n):
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
    d = a.sum(axis=1) + 1
    return sp.csr_matrix((a + np.eye(n)) / np.sqrt(np.outer(d, d)))


def test_single_instance_reduces_to_mlp(rng):
    p = HcParams.init(6, 3, rng, hidden=4)
    e = rng.standard_normal((1, 6))
    gamma = hc_forward(p, e, sp.identity(1, format="csr"))
    logits = np.maximum(e @ p.W0, 0) @ p.W1
    expected = np.exp(logits - logits.max()) / np.exp(logits - logits.max()).sum()
    assert np.allclose(gamma, expected)


def test_rows_are_distributions(rng):
    p = HcParams.init(6, 4, rng)
    gamma = hc_forward(p, rng.standard_normal((9, 6)), ring_theta(9))
    assert np.allclose(gamma.sum(axis=1), 1, atol=1e-6) and gamma.min() >= 0


def test_permutation_equivariance(rng):
    p = HcParams.init(5, 3, rng, hidden=6)
    e = rng.standard_normal((8, 5))
    theta = ring_theta(8).toarray()
    perm = rng.permutation(8)
    g1 = hc_forward(p, e, sp.csr_matrix(theta))
    g2 = hc_forward(p, e[perm], sp.csr_matrix(theta[np.ix_(perm, perm)]))
    assert np.allclose(g1[perm], g2, atol=1e-12)


def test_dimension_errors(rng):
    p = HcParams.init(5, 3, rng)
    with pytest.raises(DimensionError):
        hc_forward(p, np.ones((4, 6)), ring_theta(4))
    with pytest.raises(DimensionError):
        hc_forward(p, np.ones((4, 5)), ring_theta(5))
    with pytest.raises(DimensionError):
        HcParams(np.ones((5, 3)), np.ones((4, 2)))
    with pytest.raises(ConfigError):
        HcConfig(hidden=0)


def test_loss_value_and_perfect_case(rng):
    p = HcParams.init(4, 3, rng)
    e = rng.standard_normal((6, 4))
    theta = ring_theta(6)
    gamma = hc_forward(p, e, theta)
    ids, labels = np.array([0, 3, 5]), np.array([2, 0, 1])
    expected = -np.log(gamma[ids, labels]).sum()
    assert float(hc_loss(p, e, theta, ids, labels)) == pytest.approx(expected)
    # a saturated classifier that already predicts the labels has zero loss
    sat = HcParams(np.eye(4, 3) * 1e3, np.eye(3) * 1e3)
    e_sat = np.zeros((1, 4))
    e_sat[0, 1] = 1.0
    assert float(hc_loss(sat, e_sat, sp.identity(1, format="csr"), [0], [1])) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(UsageError):
        hc_loss(p, e, theta, [], [])


def test_loss_ignores_unlabelled_rows_content(rng):
    # with an identity Θ̂ unlabelled rows cannot influence labelled predictions
    p = HcParams.init(4, 3, rng)
    e = rng.standard_normal((5, 4))
    eye = sp.identity(5, format="csr")
    before = float(hc_loss(p, e, eye, [0, 1], [0, 2]))
    e[2:] = rng.standard_normal((3, 4))
    assert float(hc_loss(p, e, eye, [0, 1], [0, 2])) == pytest.approx(before)


def test_loss_gradient(rng):
    p = HcParams.init(6, 3, rng, hidden=4)
    e = rng.standard_normal((5, 6))
    theta = ring_theta(5)
    err = nx.finite_diff_check(lambda ws: hc_loss(p, e, theta, [0, 2, 4], [1, 0, 2], weights=ws), p.weights())
    assert err < 1e-4


def test_training_decreases_loss_and_is_deterministic(rng):
    n = 30
    labels = np.arange(n) % 3
    e = np.eye(3)[labels] + 0.3 * rng.standard_normal((n, 3))
    theta = ring_theta(n)
    p = HcParams.init(3, 3, nx.make_rng(0))
    ids = np.arange(0, n, 2)
    t1, h1 = train_hc(p, e, theta, ids, labels[ids], HcConfig(epochs=5))
    t2, h2 = train_hc(p, e, theta, ids, labels[ids], HcConfig(epochs=5))
    assert all(b < a for a, b in zip(h1, h1[1:]))
    assert h1 == h2 and np.array_equal(t1.W0, t2.W0)
    same, hist = train_hc(p, e, theta, ids, labels[ids], HcConfig(epochs=0))
    assert same is p and hist == []
