import math

import numpy as np
import pytest

from sealgraph.errors import ConfigError, OracleError, SealAborted, UsageError
from sealgraph.hgcn import HcConfig
from sealgraph.numerics import make_rng
from sealgraph.sage import TrainConfig
from sealgraph.seal import (
    DatasetOracle,
    SealConfig,
    ci_iterations,
    commit_labels,
    disagreement_loss,
    disagreement_scores,
    false_prediction_rate,
    seal_ai,
    seal_ci,
    select_active,
    select_confident,
    supervised_loss,
    total_objective,
)

from conftest import random_hierarchy

LN2 = math.log(2)
SMALL = dict(h=4, v=2, d=4, r=2, u=6, dropout=0.0, penalty=0.15)


def stub_config(**kw):
    base = dict(ic=TrainConfig(epochs=0, finetune_epochs=0), hc=HcConfig(epochs=0), model=dict(SMALL))
    base.update(kw)
    return SealConfig(**base)


# ---------------------------------------------------------------------------
# losses


def test_supervised_loss_examples():
    y = np.array([0, 1, 1])
    perfect = np.eye(2)[y]
    uniform = np.full((3, 2), 0.5)
    assert supervised_loss(perfect, perfect, [0, 1, 2], y) == 0.0
    assert supervised_loss(perfect, uniform, [0, 1, 2], y) == pytest.approx(3 * LN2)
    assert supervised_loss(uniform, uniform, [1], [1]) == pytest.approx(2 * LN2)


def test_disagreement_examples():
    assert disagreement_loss([[0.5, 0.5]], [[1.0, 0.0]], [0]) == pytest.approx(LN2)
    p = np.array([[0.2, 0.8], [0.6, 0.4]])
    assert disagreement_loss(p, p, [0, 1]) == 0.0
    assert np.allclose(disagreement_scores(p, p), 0)
    # Gamma is the reference distribution, so the direction matters
    a, b = np.array([[0.9, 0.1]]), np.array([[0.5, 0.5]])
    assert disagreement_scores(a, b)[0] != pytest.approx(disagreement_scores(b, a)[0])
    with pytest.raises(UsageError):
        disagreement_scores(p, p[:1])


def test_losses_nonnegative_on_random_rows():
    rng = make_rng(3)
    psi = rng.dirichlet(np.ones(4), 200)
    gamma = rng.dirichlet(np.ones(4), 200)
    ids = np.arange(200)
    assert supervised_loss(psi, gamma, ids[:50], rng.integers(0, 4, 50)) >= 0
    assert disagreement_loss(psi, gamma, ids) >= 0


def test_total_objective():
    assert total_objective(0, 0) == 0
    assert total_objective(1.5, 0.5) == 2.0


# ---------------------------------------------------------------------------
# selection


def test_select_confident_examples():
    g = np.array([[0.9, 0.1], [0.6, 0.4], [0.8, 0.2]])
    assert list(select_confident(g, 2)) == [0, 2]
    assert sorted(select_confident(g, 3)) == [0, 1, 2]
    assert list(select_confident(g, 10, ids=[7, 3, 5])) == [7, 5, 3]
    ties = np.full((4, 2), 0.5)
    assert list(select_confident(ties, 2, ids=[9, 4, 6, 1])) == [1, 4]


def test_select_active_examples():
    assert list(select_active([0.1, 0.9, 0.5], 1)) == [1]
    assert sorted(select_active([0.1, 0.9, 0.5], 3)) == [0, 1, 2]
    assert list(select_active([0.2, 0.2, 0.2], 2, ids=[5, 2, 8])) == [2, 5]


def test_select_active_drop_equals_selected_scores():
    rng = make_rng(8)
    psi = rng.dirichlet(np.ones(3), 30)
    gamma = rng.dirichlet(np.ones(3), 30)
    pool = np.arange(30)
    scores = disagreement_scores(psi, gamma)
    chosen = select_active(scores, 7, pool)
    before = disagreement_loss(psi, gamma, pool)
    after = disagreement_loss(psi, gamma, np.setdiff1d(pool, chosen))
    assert before - after == pytest.approx(scores[chosen].sum())
    assert scores[chosen].min() >= np.delete(scores, chosen).max()


def test_commit_labels_examples():
    assert list(commit_labels([[0.1, 0.2, 0.3, 0.4], [1, 0, 0, 0], [0.5, 0.5, 0, 0]])) == [3, 0, 0]


def test_false_prediction_rate():
    truth = np.array([0, 1, 1, 0, 1])
    perfect = np.eye(2)[truth] * 0.8 + 0.1
    assert all(rate == 0.0 for _, rate in false_prediction_rate(perfect, truth))
    assert [lam for lam, _ in false_prediction_rate(perfect, truth)] == [400, 800, 1200, 1600, 2000]
    gamma = np.array([[0.9, 0.1], [0.7, 0.3], [0.4, 0.6], [0.45, 0.55], [0.2, 0.8]])
    # confidence order: 0 (0.9), 4 (0.8), 1 (0.7), 2 (0.6), 3 (0.55); wrong rows are 1 and 3
    curve = false_prediction_rate(gamma, truth, grid=(1, 3, 5))
    assert curve == [(1, 0.0), (3, pytest.approx(1 / 3)), (5, pytest.approx(2 / 5))]


# ---------------------------------------------------------------------------
# configuration and oracle


def test_config_validation():
    with pytest.raises(ConfigError):
        SealConfig(lam=0)
    with pytest.raises(ConfigError):
        SealConfig(k=0)
    with pytest.raises(ConfigError):
        SealConfig(budget=5, k=10)
    with pytest.raises(ConfigError):
        SealConfig(model=dict(SMALL, extra=1))
    SealConfig(budget=0)


def test_dataset_oracle(rng):
    hg = random_hierarchy(rng, 6)
    oracle = DatasetOracle(hg, allowed=[1, 2])
    assert list(oracle.query([2, 1])) == [hg.instances[2].label, hg.instances[1].label]
    assert oracle.queries == 2
    with pytest.raises(OracleError):
        oracle.query([0])


# ---------------------------------------------------------------------------
# loops on small data


def test_ci_iterations_arithmetic():
    assert ci_iterations(1000, 40) == 26
    assert ci_iterations(5, 10) == 2
    assert ci_iterations(5, 5) == 2
    assert ci_iterations(41, 40) == 3


def test_seal_ci_mechanics(rng):
    hg = random_hierarchy(rng, 40, labeled=[0, 5, 9, 20])
    base = set(hg.labeled_ids)
    res = seal_ci(hg, stub_config(lam=7), make_rng(0), eval_ids=[1, 2, 3], keep_predictions=True)
    U = 36
    assert len(res.history) == math.ceil(U / 7) + 1
    for t, state in enumerate(res.history):
        assert state.t == t and state.n_pseudo == min(t * 7, U)
        assert state.n_labeled == 4 + state.n_pseudo
        assert base <= set(state.labeled_ids.tolist())
        assert state.zeta >= 0 and state.xi >= 0 and state.total == state.zeta + state.xi
        assert np.allclose(state.Psi.sum(axis=1), 1) and np.allclose(state.Gamma.sum(axis=1), 1)
        # base labels are never overwritten by pseudo-labels
        base_rows = np.isin(state.labeled_ids, list(base))
        truth = np.array([hg.instances[i].label for i in state.labeled_ids[base_rows]])
        assert np.array_equal(state.labels[base_rows], truth)
    assert res.history[-1].n_pseudo == U


def test_seal_ci_large_lambda_commits_everything_at_once(rng):
    hg = random_hierarchy(rng, 12, labeled=[0, 1])
    res = seal_ci(hg, stub_config(lam=50), make_rng(0))
    assert [s.n_pseudo for s in res.history] == [0, 10]


def test_seal_ai_mechanics(rng):
    hg = random_hierarchy(rng, 50, labeled=[3, 4, 10])
    test_ids = np.arange(40, 50)
    oracle = DatasetOracle(hg)
    res = seal_ai(hg, oracle, stub_config(budget=20, k=6), make_rng(0), exclude_ids=test_ids)
    assert len(res.annotated) == 18 and oracle.queries == 18
    assert len(set(res.annotated.tolist())) == 18
    assert not set(res.annotated.tolist()) & {3, 4, 10}
    assert not set(res.annotated.tolist()) & set(test_ids.tolist())
    assert [s.n_annotated for s in res.history] == [0, 6, 12, 18]
    assert all(s.n_annotated <= 20 for s in res.history)


def test_seal_ai_zero_budget_is_single_pass(rng):
    hg = random_hierarchy(rng, 10, labeled=[0])
    res = seal_ai(hg, DatasetOracle(hg), stub_config(budget=0), make_rng(0))
    assert len(res.history) == 1 and len(res.annotated) == 0


def test_seal_ai_stops_when_pool_is_empty(rng):
    hg = random_hierarchy(rng, 8, labeled=[0, 1])
    res = seal_ai(hg, DatasetOracle(hg), stub_config(budget=100, k=4), make_rng(0))
    assert len(res.annotated) == 6 and res.history[-1].n_annotated == 6


class FlakyOracle:
    def __init__(self, hg, fail_on):
        self.inner = DatasetOracle(hg)
        self.calls = 0
        self.fail_on = fail_on

    def query(self, ids):
        self.calls += 1
        if self.calls == self.fail_on:
            raise OracleError("annotator unavailable")
        return self.inner.query(ids)


def test_seal_ai_oracle_failure_keeps_partial_history(rng):
    hg = random_hierarchy(rng, 30, labeled=[0, 1])
    with pytest.raises(SealAborted) as info:
        seal_ai(hg, FlakyOracle(hg, 3), stub_config(budget=20, k=5), make_rng(0))
    partial = info.value.result
    assert len(partial.history) == 3 and len(partial.annotated) == 10


def test_loops_are_deterministic_with_training(rng):
    hg = random_hierarchy(rng, 25, labeled=list(range(0, 25, 3)))
    cfg = stub_config(lam=6, ic=TrainConfig(epochs=2, finetune_epochs=1, batch_size=4), hc=HcConfig(epochs=3))
    a = seal_ci(hg, cfg, make_rng(4))
    b = seal_ci(hg, cfg, make_rng(4))
    assert np.array_equal(a.Gamma, b.Gamma) and np.array_equal(a.Psi, b.Psi)
    assert [s.total for s in a.history] == [s.total for s in b.history]
    cfg = stub_config(budget=6, k=3, ic=TrainConfig(epochs=2, finetune_epochs=1, batch_size=4), hc=HcConfig(epochs=3))
    x = seal_ai(hg, DatasetOracle(hg), cfg, make_rng(4))
    y = seal_ai(hg, DatasetOracle(hg), cfg, make_rng(4))
    assert np.array_equal(x.annotated, y.annotated) and np.array_equal(x.Gamma, y.Gamma)


def test_loops_require_labels(rng):
    hg = random_hierarchy(rng, 5, labeled=[])
    with pytest.raises(UsageError):
        seal_ci(hg, stub_config(), make_rng(0))
