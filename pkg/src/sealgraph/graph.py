"""Graph instances, the hierarchical graph that links them, and normalisation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ValidationError


@dataclass(eq=False)
class GraphInstance:
    """One attributed graph: dense 0/1 adjacency plus an n x phi feature matrix."""

    id: str
    adjacency: np.ndarray
    features: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.uint8)
        self.features = np.asarray(self.features, dtype=np.float64)

    @property
    def n(self):
        return self.adjacency.shape[0]

    @property
    def phi(self):
        return self.features.shape[1]

    @property
    def degrees(self):
        return self.adjacency.sum(axis=1).astype(np.int64)

    @property
    def num_edges(self):
        return int(np.triu(self.adjacency, 1).sum())

    def edges(self):
        """Upper-triangle edge list as an (m, 2) int array, lexicographically sorted."""
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return np.stack([i, j], axis=1)

    @classmethod
    def from_edges(cls, id, n, edges, features, label=None):
        a = np.zeros((n, n), dtype=np.uint8)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            a[edges[:, 0], edges[:, 1]] = 1
            a[edges[:, 1], edges[:, 0]] = 1
        return cls(id=id, adjacency=a, features=features, label=label)


@dataclass(eq=False)
class HierarchicalGraph:
    """Graph instances linked by the symmetric 0/1 instance adjacency ``theta``.

    ``labeled_ids`` are the instances whose labels a learner may read; truth
    for the rest may still be stored on the instances for evaluation.
    """

    instances: list
    theta: sp.csr_matrix
    num_classes: int
    labeled_ids: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = sp.csr_matrix(self.theta, dtype=np.int8)
        if self.labeled_ids is None:
            self.labeled_ids = np.array(
                [i for i, g in enumerate(self.instances) if g.label is not None], dtype=np.int64
            )
        self.labeled_ids = np.unique(np.asarray(self.labeled_ids, dtype=np.int64))

    def __len__(self):
        return len(self.instances)

    @property
    def unlabeled_ids(self):
        mask = np.ones(len(self.instances), dtype=bool)
        mask[self.labeled_ids] = False
        return np.flatnonzero(mask)

    @property
    def phi(self):
        return self.instances[0].phi if self.instances else 0

    def truth(self):
        """Ground-truth label per instance, -1 where unknown."""
        return np.array([-1 if g.label is None else g.label for g in self.instances], dtype=np.int64)

    def with_labeled(self, ids):
        return replace(self, labeled_ids=np.asarray(ids, dtype=np.int64))


@dataclass
class ValidationReport:
    ok: bool
    message: str = "ok"

    def __bool__(self):
        return self.ok

    def raise_for_error(self):
        if not self.ok:
            raise ValidationError(self.message)


# ---------------------------------------------------------------------------
# normalisation


def _check_adjacency(a, what="adjacency"):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{what} must be square, got shape {a.shape}")
    if sp.issparse(a):
        if (a != a.T).nnz:
            raise ValidationError(f"{what} is not symmetric")
        if np.any(a.diagonal() != 0):
            raise ValidationError(f"{what} has self-loops")
    else:
        if not np.array_equal(a, a.T):
            raise ValidationError(f"{what} is not symmetric")
        if np.any(np.diag(a) != 0):
            raise ValidationError(f"{what} has self-loops")


def normalize_adjacency(a):
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.

    Dense input gives a dense result; sparse input gives CSR.
    """
    _check_adjacency(a)
    n = a.shape[0]
    if sp.issparse(a):
        a1 = sp.csr_matrix(a, dtype=np.float64) + sp.identity(n, format="csr")
        inv = 1.0 / np.sqrt(np.asarray(a1.sum(axis=1)).ravel())
        dinv = sp.diags(inv)
        return sp.csr_matrix(dinv @ a1 @ dinv)
    a1 = np.asarray(a, dtype=np.float64) + np.eye(n)
    inv = 1.0 / np.sqrt(a1.sum(axis=1))
    return a1 * inv[:, None] * inv[None, :]


def normalize_theta(hg):
    return normalize_adjacency(hg.theta)


# ---------------------------------------------------------------------------
# validation


def validate_instance(g, phi=None):
    a = g.adjacency
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return ValidationReport(False, f"instance {g.id}: adjacency shape {a.shape} is not square")
    if a.shape[0] < 1:
        return ValidationReport(False, f"instance {g.id}: empty graph")
    if not np.all((a == 0) | (a == 1)):
        return ValidationReport(False, f"instance {g.id}: adjacency entries must be 0/1")
    if np.any(np.diag(a)):
        i = int(np.flatnonzero(np.diag(a))[0])
        return ValidationReport(False, f"instance {g.id}: self-loop at node {i}")
    bad = np.argwhere(a != a.T)
    if len(bad):
        i, j = bad[0]
        return ValidationReport(False, f"instance {g.id}: adjacency asymmetric at ({i}, {j})")
    if g.features.ndim != 2 or g.features.shape[0] != a.shape[0]:
        return ValidationReport(
            False, f"instance {g.id}: features shape {g.features.shape} does not match n={a.shape[0]}"
        )
    if phi is not None and g.features.shape[1] != phi:
        return ValidationReport(False, f"instance {g.id}: phi={g.features.shape[1]}, expected {phi}")
    if not np.all(np.isfinite(g.features)):
        return ValidationReport(False, f"instance {g.id}: non-finite features")
    return ValidationReport(True)


def validate(hg):
    """Check every structural invariant; report the first violation."""
    total = len(hg.instances)
    theta = hg.theta
    if theta.shape != (total, total):
        return ValidationReport(False, f"theta shape {theta.shape} does not match {total} instances")
    if theta.nnz and not np.all(theta.data == 1):
        return ValidationReport(False, "theta entries must be 0/1")
    diag = theta.diagonal()
    if np.any(diag):
        i = int(np.flatnonzero(diag)[0])
        return ValidationReport(False, f"theta has a self-loop at instance {i}")
    asym = (theta != theta.T).tocoo()
    if asym.nnz:
        i, j = int(asym.row[0]), int(asym.col[0])
        return ValidationReport(False, f"theta asymmetric at pair ({i}, {j})")

    phi = hg.phi
    for g in hg.instances:
        rep = validate_instance(g, phi)
        if not rep:
            return rep

    lab = hg.labeled_ids
    if len(lab) and (lab.min() < 0 or lab.max() >= total):
        return ValidationReport(False, "labeled id out of range")
    for i in lab:
        y = hg.instances[i].label
        if y is None:
            return ValidationReport(False, f"labeled instance {i} has no label")
        if not 0 <= y < hg.num_classes:
            return ValidationReport(False, f"instance {i} label {y} outside [0, {hg.num_classes})")
    return ValidationReport(True)


# ---------------------------------------------------------------------------
# partitioning


def split(hg, labeled_count, test_count, rng):
    """Disjoint seeded (train, test) id sets drawn from instances that carry truth."""
    pool = np.array([i for i, g in enumerate(hg.instances) if g.label is not None], dtype=np.int64)
    if labeled_count < 0 or test_count < 0:
        raise ConfigError("split sizes must be non-negative")
    if labeled_count + test_count > len(pool):
        raise ConfigError(
            f"cannot draw {labeled_count} train + {test_count} test ids from {len(pool)} labelled instances"
        )
    # test ids come first so a fixed seed gives the same test set, and nested
    # training sets, across label sizes
    order = rng.permutation(pool)
    test = np.sort(order[:test_count])
    train = np.sort(order[test_count:test_count + labeled_count])
    return train, test
