"""Semi-supervised (SEAL-CI) and active (SEAL-AI) training loops.

Both loops alternate between the instance classifier (SAGE, giving Psi)
and the hierarchical classifier (a GCN over instance embeddings, giving
Gamma). Only the supervised loss is ever differentiated; the disagreement
term is reported and drives selection.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from . import numerics as nx
from .errors import ConfigError, OracleError, SealAborted, UsageError
from .graph import normalize_theta
from .hgcn import HcConfig, HcParams, hc_forward, train_hc
from .metrics import accuracy, macro_f1
from .sage import PROFILES, SageData, SageParams, TrainConfig, embed_all, fine_tune_ic, train_ic

log = logging.getLogger(__name__)

FALSE_RATE_GRID = (400, 800, 1200, 1600, 2000)


@dataclass
class SealConfig:
    lam: int = 40
    budget: int = 160
    k: int = 10
    ic: TrainConfig = field(default_factory=TrainConfig)
    hc: HcConfig = field(default_factory=HcConfig)
    model: dict = field(default_factory=lambda: dict(PROFILES["synthetic"]))
    seed: int = 0
    ai_fine_tune: bool = True

    def __post_init__(self):
        if self.lam < 1:
            raise ConfigError(f"lambda must be at least 1, got {self.lam}")
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if self.budget < 0:
            raise ConfigError(f"budget must be non-negative, got {self.budget}")
        if 0 < self.budget < self.k:
            raise ConfigError(f"budget {self.budget} is smaller than k={self.k}")
        unknown = set(self.model) - set(PROFILES["synthetic"])
        if unknown:
            raise ConfigError(f"unknown model settings: {sorted(unknown)}")
        missing = set(PROFILES["synthetic"]) - set(self.model)
        if missing:
            raise ConfigError(f"missing model settings: {sorted(missing)}")
        for key in ("h", "v", "d", "r", "u"):
            if int(self.model[key]) < 1:
                raise ConfigError(f"model dimension {key} must be positive, got {self.model[key]}")
        if not 0.0 <= self.model["dropout"] < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.model['dropout']}")
        if self.model["penalty"] < 0:
            raise ConfigError(f"penalty coefficient must be non-negative, got {self.model['penalty']}")

    def init_ic(self, phi, c, rng):
        m = self.model
        return SageParams.init(phi, c, rng, h=m["h"], v=m["v"], d=m["d"], r=m["r"], u=m["u"],
                               dropout_rate=m["dropout"], penalty_coeff=m["penalty"])


@dataclass(frozen=True)
class IterationState:
    """Snapshot taken after the IC and HC of iteration ``t`` were trained."""

    t: int
    labeled_ids: np.ndarray
    labels: np.ndarray
    n_pseudo: int
    n_annotated: int
    zeta: float
    xi: float
    total: float
    accuracy: Optional[float] = None
    macro_f1: Optional[float] = None
    ic_accuracy: Optional[float] = None
    Psi: Optional[np.ndarray] = None
    Gamma: Optional[np.ndarray] = None

    @property
    def n_labeled(self):
        return len(self.labeled_ids)

    def row(self):
        return dict(t=self.t, n_labeled=self.n_labeled, n_pseudo=self.n_pseudo,
                    n_annotated=self.n_annotated, zeta=self.zeta, xi=self.xi, total=self.total,
                    accuracy=self.accuracy, macro_f1=self.macro_f1, ic_accuracy=self.ic_accuracy)


@dataclass
class SealResult:
    Psi: np.ndarray
    Gamma: np.ndarray
    ic_params: SageParams
    hc_params: HcParams
    history: list
    annotated: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    embeddings: Optional[np.ndarray] = None

    def predictions(self):
        return np.argmax(self.Gamma, axis=1)


# ---------------------------------------------------------------------------
# losses


def _rows(m, ids):
    m = np.asarray(m, dtype=np.float64)
    return m if ids is None else m[np.asarray(ids, dtype=np.int64)]


def supervised_loss(Psi, Gamma, labeled_ids, labels):
    """Summed cross-entropy of both classifiers on the labelled rows."""
    labels = np.asarray(labels, dtype=np.int64)
    return float(nx.cross_entropy_rows(_rows(Psi, labeled_ids), labels)
                 + nx.cross_entropy_rows(_rows(Gamma, labeled_ids), labels))


def disagreement_scores(Psi_u, Gamma_u):
    """KL(gamma_i || psi_i) per row, with Gamma as the reference."""
    Psi_u = np.asarray(Psi_u, dtype=np.float64)
    Gamma_u = np.asarray(Gamma_u, dtype=np.float64)
    if Psi_u.shape != Gamma_u.shape:
        raise UsageError(f"Psi rows {Psi_u.shape} and Gamma rows {Gamma_u.shape} differ")
    return nx.kl_rows(Gamma_u, Psi_u)


def disagreement_loss(Psi, Gamma, unlabeled_ids):
    return float(np.sum(disagreement_scores(_rows(Psi, unlabeled_ids), _rows(Gamma, unlabeled_ids))))


def total_objective(zeta, xi):
    return zeta + xi


# ---------------------------------------------------------------------------
# selection


def _top(score, count, ids):
    ids = np.arange(len(score)) if ids is None else np.asarray(ids, dtype=np.int64)
    if len(ids) != len(score):
        raise UsageError(f"{len(ids)} ids for {len(score)} rows")
    count = max(0, min(int(count), len(ids)))
    order = np.lexsort((ids, -np.asarray(score)))
    return ids[order[:count]]


def select_confident(Gamma_u, count, ids=None):
    """The ``count`` ids with the largest max-probability; ties go to lower ids.

    ``ids`` names the rows of ``Gamma_u`` (default: row positions). A count
    beyond the number of rows is clamped.
    """
    Gamma_u = np.asarray(Gamma_u, dtype=np.float64)
    conf = Gamma_u.max(axis=1) if len(Gamma_u) else np.zeros(0)
    return _top(conf, count, ids)


def select_active(scores, k, ids=None):
    """The ``k`` ids with the largest disagreement score; ties go to lower ids."""
    return _top(np.asarray(scores, dtype=np.float64), k, ids)


def commit_labels(Gamma_rows):
    """One-hot commitment: argmax per row, lowest class on ties."""
    return np.argmax(np.asarray(Gamma_rows), axis=1).astype(np.int64)


def false_prediction_rate(Gamma_u, truth_u, grid=FALSE_RATE_GRID, ids=None):
    """(lambda, error rate among the top-lambda confident rows) for each grid point."""
    Gamma_u = np.asarray(Gamma_u, dtype=np.float64)
    truth_u = np.asarray(truth_u, dtype=np.int64)
    positions = np.arange(len(Gamma_u))
    curve = []
    for lam in grid:
        chosen = select_confident(Gamma_u, lam, positions)
        if len(chosen) == 0:
            curve.append((int(lam), 0.0))
            continue
        wrong = np.argmax(Gamma_u[chosen], axis=1) != truth_u[chosen]
        curve.append((int(lam), float(np.mean(wrong))))
    return curve


# ---------------------------------------------------------------------------
# oracles


class Oracle(Protocol):
    def query(self, ids) -> np.ndarray: ...


class DatasetOracle:
    """Answers queries from the labels stored on the instances."""

    def __init__(self, hg, allowed=None):
        self._hg = hg
        self._allowed = None if allowed is None else set(int(i) for i in allowed)
        self.queries = 0

    def query(self, ids):
        out = []
        for i in np.asarray(ids, dtype=np.int64):
            if self._allowed is not None and int(i) not in self._allowed:
                raise OracleError(f"instance {i} may not be queried")
            y = self._hg.instances[i].label
            if y is None or not 0 <= y < self._hg.num_classes:
                raise OracleError(f"no valid label for instance {i}")
            out.append(y)
        self.queries += len(out)
        return np.array(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# loops


class _Loop:
    """State shared by both algorithms: data, Θ̂, models and evaluation."""

    def __init__(self, hg, config, rng, eval_ids, keep_predictions):
        if len(hg.labeled_ids) < 1:
            raise UsageError("at least one labelled instance is required")
        self.hg = hg
        self.config = config
        self.rng = rng
        self.data = SageData(hg.instances)
        self.theta_hat = normalize_theta(hg)
        self.base_ids = np.asarray(hg.labeled_ids, dtype=np.int64)
        self.base_labels = self.data.labels(self.base_ids)
        self.eval_ids = None if eval_ids is None else np.asarray(eval_ids, dtype=np.int64)
        self.eval_truth = None if eval_ids is None else self.data.labels(self.eval_ids)
        self.keep = keep_predictions
        self.ic = config.init_ic(hg.phi, hg.num_classes, rng)
        self.hc = None
        self.trained = False
        self.history = []
        self.emb = None
        self.gamma = None

    def train(self, ids, labels, fine_tune):
        cfg = self.config
        if fine_tune and self.trained:
            self.ic, _ = fine_tune_ic(self.ic, self.data, cfg.ic, self.rng, ids, labels)
        else:
            if self.trained:
                self.ic = cfg.init_ic(self.hg.phi, self.hg.num_classes, self.rng)
            self.ic, _ = train_ic(self.ic, self.data, cfg.ic, self.rng, ids, labels)
        self.trained = True
        self.emb = embed_all(self.ic, self.data)
        if self.hc is None or not cfg.hc.fine_tune:
            self.hc = HcParams.init(self.emb.E.shape[1], self.hg.num_classes, self.rng, cfg.hc.hidden)
        self.hc, _ = train_hc(self.hc, self.emb.E, self.theta_hat, ids, labels, cfg.hc, self.rng)
        self.gamma = hc_forward(self.hc, self.emb.E, self.theta_hat)

    def record(self, t, ids, labels, unlabeled, n_pseudo, n_annotated):
        psi, gamma = self.emb.Psi, self.gamma
        zeta = supervised_loss(psi, gamma, ids, labels)
        xi = disagreement_loss(psi, gamma, unlabeled)
        acc = f1 = ic_acc = None
        if self.eval_ids is not None and len(self.eval_ids):
            pred = np.argmax(gamma[self.eval_ids], axis=1)
            acc = accuracy(pred, self.eval_truth)
            f1 = macro_f1(pred, self.eval_truth, self.hg.num_classes)
            ic_acc = accuracy(np.argmax(psi[self.eval_ids], axis=1), self.eval_truth)
        state = IterationState(
            t=t, labeled_ids=np.array(ids), labels=np.array(labels), n_pseudo=n_pseudo,
            n_annotated=n_annotated, zeta=zeta, xi=xi, total=total_objective(zeta, xi),
            accuracy=acc, macro_f1=f1, ic_accuracy=ic_acc,
            Psi=psi.copy() if self.keep else None, Gamma=gamma.copy() if self.keep else None,
        )
        self.history.append(state)
        log.info("t=%d labelled=%d zeta=%.4f xi=%.4f acc=%s", t, len(ids), zeta, xi, acc)
        return state

    def result(self, annotated=None):
        return SealResult(
            Psi=self.emb.Psi, Gamma=self.gamma, ic_params=self.ic, hc_params=self.hc,
            history=self.history, embeddings=self.emb.E,
            annotated=np.zeros(0, dtype=np.int64) if annotated is None else np.asarray(annotated),
        )


def ci_iterations(unlabeled, lam):
    """Number of IC/HC updates SEAL-CI performs: ceil(U / lambda) + 1."""
    return math.ceil(unlabeled / lam) + 1


def seal_ci(hg, config, rng, eval_ids=None, keep_predictions=False):
    """Self-training with pseudo-labels committed from the hierarchical classifier.

    Iteration t trains on the base labels plus ``min(t * lam, U)`` pseudo-labels
    re-selected from the whole originally-unlabelled pool; the first iteration
    trains the IC from scratch and later ones fine-tune it.
    """
    loop = _Loop(hg, config, rng, eval_ids, keep_predictions)
    pool = hg.unlabeled_ids
    U = len(pool)
    steps = ci_iterations(U, config.lam)
    ids, labels, n_pseudo = loop.base_ids, loop.base_labels, 0
    for t in range(steps):
        loop.train(ids, labels, fine_tune=t > 0)
        loop.record(t, ids, labels, pool, n_pseudo, 0)
        if t == steps - 1:
            break
        n_pseudo = min((t + 1) * config.lam, U)
        chosen = select_confident(loop.gamma[pool], n_pseudo, pool)
        ids = np.concatenate([loop.base_ids, chosen])
        labels = np.concatenate([loop.base_labels, commit_labels(loop.gamma[chosen])])
    return loop.result()


def seal_ai(hg, oracle, config, rng, eval_ids=None, exclude_ids=None, keep_predictions=False):
    """Active learning: query the oracle for the k largest-disagreement instances per round.

    ``exclude_ids`` are never offered to the oracle (typically the test set).
    Rounds stop before the annotated count would exceed the budget. An
    oracle failure raises SealAborted carrying the partial result.
    """
    loop = _Loop(hg, config, rng, eval_ids, keep_predictions)
    pool = hg.unlabeled_ids
    if exclude_ids is not None:
        pool = np.setdiff1d(pool, np.asarray(exclude_ids, dtype=np.int64))
    unlabeled = hg.unlabeled_ids
    ids, labels = loop.base_ids, loop.base_labels
    annotated = np.zeros(0, dtype=np.int64)
    t = 0
    while True:
        loop.train(ids, labels, fine_tune=config.ai_fine_tune)
        loop.record(t, ids, labels, unlabeled, 0, len(annotated))
        if len(annotated) + config.k > config.budget or len(pool) == 0:
            break
        scores = disagreement_scores(loop.emb.Psi[pool], loop.gamma[pool])
        chosen = select_active(scores, config.k, pool)
        try:
            answers = np.asarray(oracle.query(chosen), dtype=np.int64)
        except OracleError as exc:
            raise SealAborted(f"oracle failed at round {t}: {exc}", loop.result(annotated)) from exc
        if answers.shape != chosen.shape or np.any((answers < 0) | (answers >= hg.num_classes)):
            raise SealAborted(f"oracle returned invalid labels at round {t}", loop.result(annotated))
        annotated = np.concatenate([annotated, chosen])
        ids = np.concatenate([ids, chosen])
        labels = np.concatenate([labels, answers])
        pool = np.setdiff1d(pool, chosen)
        unlabeled = np.setdiff1d(unlabeled, chosen)
        t += 1
    return loop.result(annotated)


def train_sage_only(hg, config, rng, eval_ids=None):
    """Baseline: the instance classifier alone on the base labels, evaluated by Psi."""
    loop = _Loop(hg, config, rng, eval_ids, False)
    loop.ic, _ = train_ic(loop.ic, loop.data, config.ic, rng, loop.base_ids, loop.base_labels)
    emb = embed_all(loop.ic, loop.data)
    acc = None
    if loop.eval_ids is not None and len(loop.eval_ids):
        acc = accuracy(np.argmax(emb.Psi[loop.eval_ids], axis=1), loop.eval_truth)
    return loop.ic, emb, acc
