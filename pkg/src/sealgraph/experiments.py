"""Train-and-evaluate protocols shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import split
from .metrics import accuracy, macro_f1
from .numerics import make_rng
from .seal import DatasetOracle, SealResult, seal_ai, seal_ci, train_sage_only

log = logging.getLogger(__name__)


@dataclass
class MethodRun:
    method: str
    seed: int
    n_labeled: int
    accuracy: float
    macro_f1: float
    train_ids: np.ndarray
    test_ids: np.ndarray
    Psi: np.ndarray
    Gamma: Optional[np.ndarray] = None
    result: Optional[SealResult] = None
    ic_params: object = None
    extra: dict = field(default_factory=dict)

    def predictions(self):
        return np.argmax(self.Psi if self.Gamma is None else self.Gamma, axis=1)


def run_method(hg, method, seal_config, seed, labeled, test):
    """Train ``method`` on a seeded split and score it on the test ids.

    SAGE is scored by the instance classifier alone; the SEAL methods by the
    hierarchical classifier. For SEAL-AI ``labeled`` is the base set and the
    budget comes from ``seal_config``; test ids are never queried.
    """
    train, test_ids = split(hg, labeled, test, make_rng(seed, "split"))
    view = hg.with_labeled(train)
    truth = hg.truth()
    rng = make_rng(seed, method)
    if method == "sage":
        ic, emb, _ = train_sage_only(view, seal_config, rng)
        Psi, Gamma, result = emb.Psi, None, None
    elif method == "seal-ci":
        result = seal_ci(view, seal_config, rng, eval_ids=test_ids)
        ic, Psi, Gamma = result.ic_params, result.Psi, result.Gamma
    elif method == "seal-ai":
        oracle = DatasetOracle(view)
        result = seal_ai(view, oracle, seal_config, rng, eval_ids=test_ids, exclude_ids=test_ids)
        ic, Psi, Gamma = result.ic_params, result.Psi, result.Gamma
    else:
        raise ValueError(f"unknown method {method!r}")
    run = MethodRun(method, seed, labeled, 0.0, 0.0, train, test_ids, Psi, Gamma, result, ic)
    if len(test_ids):
        pred = run.predictions()[test_ids]
        run.accuracy = accuracy(pred, truth[test_ids])
        run.macro_f1 = macro_f1(pred, truth[test_ids], hg.num_classes)
    log.info("%s seed=%d labelled=%d accuracy=%.4f", method, seed, labeled, run.accuracy)
    return run


@dataclass
class SweepRow:
    size: int
    method: str
    accuracy: float
    macro_f1: float
    per_seed: list


def sweep(hg, run_config, seeds=None):
    """Label-size sweep; SEAL-AI keeps the smallest size as its base and spends the rest as budget."""
    sizes = run_config.size_list()
    seeds = list(range(run_config.seed, run_config.seed + run_config.repeat)) if seeds is None else seeds
    base = min(sizes)
    rows = []
    for size in sizes:
        for method in run_config.method_list():
            accs, f1s = [], []
            for seed in seeds:
                if method == "seal-ai":
                    cfg = run_config.seal_config(seed=seed, budget=size - base)
                    run = run_method(hg, method, cfg, seed, base, run_config.test)
                else:
                    run = run_method(hg, method, run_config.seal_config(seed=seed), seed, size,
                                     run_config.test)
                accs.append(run.accuracy)
                f1s.append(run.macro_f1)
            rows.append(SweepRow(size, method, float(np.mean(accs)), float(np.mean(f1s)), accs))
    return rows
