"""Synthetic hierarchical-graph benchmark.

A skeleton graph (a citation network, or a stochastic block model standing
in for one) supplies the instance-level links and one class per node.  Each
skeleton node becomes a graph instance drawn from the graph family that its
class maps to, so the instance label is the generating family.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataFormatError, ValidationError
from .graph import GraphInstance, HierarchicalGraph
from .numerics import make_rng

log = logging.getLogger(__name__)


class FamilyKind(IntEnum):
    WATTS_STROGATZ = 0
    TREE = 1
    ERDOS_RENYI = 2
    BARBELL = 3
    BIPARTITE = 4
    BARABASI_ALBERT = 5
    PATH = 6

    @property
    def label(self):
        return _FAMILY_LABELS[self]


_FAMILY_LABELS = {
    FamilyKind.WATTS_STROGATZ: "Watts-Strogatz",
    FamilyKind.TREE: "Tree",
    FamilyKind.ERDOS_RENYI: "Erdos-Renyi",
    FamilyKind.BARBELL: "Barbell",
    FamilyKind.BIPARTITE: "Bipartite",
    FamilyKind.BARABASI_ALBERT: "Barabasi-Albert",
    FamilyKind.PATH: "Path",
}

DEFAULT_CLASS_SIZES = (351, 217, 418, 818, 426, 298, 180)

# Target per-family statistics the generator is calibrated to: (count, mean nodes, mean edges).
REFERENCE_STATS = {
    FamilyKind.WATTS_STROGATZ: (351, 173, 347),
    FamilyKind.TREE: (217, 127, 120),
    FamilyKind.ERDOS_RENYI: (418, 174, 3045),
    FamilyKind.BARBELL: (818, 169, 2379),
    FamilyKind.BIPARTITE: (426, 144, 1102),
    FamilyKind.BARABASI_ALBERT: (298, 173, 509),
    FamilyKind.PATH: (180, 175, 170),
}

# Citation-network scale the block-model skeleton imitates.
CITATION_MEAN_DEGREE = 2 * 5278 / 2708
CITATION_HOMOPHILY = 0.81

FEATURE_SCHEMES = ("structural",)


@dataclass(frozen=True)
class GenConfig:
    size_range: tuple = (100, 200)
    p_range: tuple = (0.1, 0.5)
    branching_range: tuple = (1, 3)
    removal_range: tuple = (0.01, 0.20)
    seed: int = 0
    feature_scheme: str = "structural"
    ws_degree: int = 4
    bipartite_density: float = 0.7
    ba_attachment_scale: float = 10.0

    def __post_init__(self):
        lo, hi = self.size_range
        if not 3 <= lo <= hi:
            raise ConfigError(f"size range {self.size_range} must satisfy 3 <= lo <= hi")
        for name in ("p_range", "removal_range"):
            a, b = getattr(self, name)
            if not 0.0 <= a <= b <= 1.0:
                raise ConfigError(f"{name} {getattr(self, name)} must lie within [0, 1]")
        b0, b1 = self.branching_range
        if not 1 <= b0 <= b1:
            raise ConfigError(f"branching range {self.branching_range} must satisfy 1 <= lo <= hi")
        if self.feature_scheme not in FEATURE_SCHEMES:
            raise ConfigError(f"unknown feature scheme {self.feature_scheme!r}")
        if self.ws_degree < 2 or self.ws_degree % 2:
            raise ConfigError("Watts-Strogatz ring degree must be even and >= 2")
        if not 0.0 < self.bipartite_density <= 1.0:
            raise ConfigError("bipartite density scale must lie in (0, 1]")

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class Skeleton:
    num_nodes: int
    edges: np.ndarray
    classes: np.ndarray
    class_names: list = field(default_factory=list)
    source: str = "synthetic"
    dropped_self_loops: int = 0

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.classes = np.asarray(self.classes, dtype=np.int64)
        if len(self.classes) != self.num_nodes:
            raise ValidationError(f"{len(self.classes)} class assignments for {self.num_nodes} nodes")
        if len(self.edges) and np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ValidationError("skeleton contains self-loops")
        if len(self.classes) and (self.classes.min() < 0 or self.classes.max() >= len(FamilyKind)):
            raise ValidationError("skeleton class outside the 7 graph families")

    def adjacency(self):
        n = self.num_nodes
        e = self.edges
        a = sp.coo_matrix((np.ones(len(e), dtype=np.int8), (e[:, 0], e[:, 1])), shape=(n, n))
        return (a + a.T).tocsr()

    def class_counts(self):
        return np.bincount(self.classes, minlength=len(FamilyKind))


# ---------------------------------------------------------------------------
# skeletons


def load_citation_skeleton(edges_path, classes_path):
    """Parse an edge file of id pairs and a class file (``id ... class`` per line).

    Ids become dense indices in their first-appearance order in the class
    file; class tokens become family indices in first-appearance order.
    """
    ids, classes, names = {}, [], {}
    classes_path = Path(classes_path)
    with open(classes_path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok:
                continue
            if len(tok) < 2:
                raise DataFormatError("expected '<id> ... <class>'", classes_path, lineno)
            if tok[0] in ids:
                raise DataFormatError(f"duplicate id {tok[0]!r}", classes_path, lineno)
            ids[tok[0]] = len(ids)
            classes.append(names.setdefault(tok[-1], len(names)))
    if len(names) > len(FamilyKind):
        raise ValidationError(f"{len(names)} classes but only {len(FamilyKind)} graph families")

    edges, self_loops = set(), 0
    edges_path = Path(edges_path)
    with open(edges_path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok:
                continue
            if len(tok) != 2:
                raise DataFormatError("expected two whitespace-separated ids", edges_path, lineno)
            try:
                a, b = ids[tok[0]], ids[tok[1]]
            except KeyError as exc:
                raise ValidationError(
                    f"{edges_path}:{lineno}: node {exc.args[0]!r} has no class assignment"
                ) from None
            if a == b:
                self_loops += 1
                continue
            edges.add((min(a, b), max(a, b)))
    if self_loops:
        log.warning("dropped %d self-loop lines from %s", self_loops, edges_path)
    return Skeleton(
        num_nodes=len(ids),
        edges=np.array(sorted(edges), dtype=np.int64).reshape(-1, 2),
        classes=np.array(classes, dtype=np.int64),
        class_names=list(names),
        source=f"citation:{edges_path.name}",
        dropped_self_loops=self_loops,
    )


def scaled_class_sizes(scale, sizes=DEFAULT_CLASS_SIZES):
    """Largest-remainder rounding of ``scale * sizes`` to round(scale * total)."""
    raw = np.asarray(sizes, dtype=np.float64) * scale
    target = int(round(raw.sum()))
    out = np.floor(raw).astype(np.int64)
    order = np.argsort(-(raw - out), kind="stable")
    out[order[: target - out.sum()]] += 1
    return tuple(int(x) for x in np.maximum(out, 1))


def block_probabilities(class_sizes, mean_degree=CITATION_MEAN_DEGREE, homophily=CITATION_HOMOPHILY):
    """Intra/inter link probabilities giving the requested mean degree and edge homophily."""
    sizes = np.asarray(class_sizes, dtype=np.float64)
    n = sizes.sum()
    edges = mean_degree * n / 2
    intra = (sizes * (sizes - 1) / 2).sum()
    inter = n * (n - 1) / 2 - intra
    p_in = min(1.0, homophily * edges / intra) if intra else 0.0
    p_out = min(1.0, (1 - homophily) * edges / inter) if inter else 0.0
    return p_in, p_out


def synth_skeleton(class_sizes=DEFAULT_CLASS_SIZES, p_in=None, p_out=None, rng=None):
    """Stochastic block model skeleton with randomly ordered class blocks."""
    if any(s < 1 for s in class_sizes):
        raise ConfigError("class sizes must be positive")
    if len(class_sizes) > len(FamilyKind):
        raise ConfigError(f"at most {len(FamilyKind)} classes")
    rng = make_rng(0) if rng is None else rng
    d_in, d_out = block_probabilities(class_sizes)
    p_in = d_in if p_in is None else p_in
    p_out = d_out if p_out is None else p_out
    classes = rng.permutation(np.repeat(np.arange(len(class_sizes)), class_sizes))
    n = len(classes)
    rows, cols = [], []
    for i in range(n - 1):
        same = classes[i + 1:] == classes[i]
        hit = rng.random(n - i - 1) < np.where(same, p_in, p_out)
        j = np.flatnonzero(hit) + i + 1
        rows.append(np.full(len(j), i))
        cols.append(j)
    edges = np.stack([np.concatenate(rows or [[]]), np.concatenate(cols or [[]])], axis=1).astype(np.int64)
    return Skeleton(
        num_nodes=n,
        edges=edges,
        classes=classes,
        class_names=[FamilyKind(k).label for k in range(len(class_sizes))],
        source=f"sbm:p_in={p_in:.6g},p_out={p_out:.6g}",
    )


# ---------------------------------------------------------------------------
# graph families (dense 0/1 adjacency, before edge removal)


def _connect(a, i, j):
    a[i, j] = a[j, i] = 1


def watts_strogatz(n, k, p, rng):
    """Ring lattice of even degree k with each lattice edge rewired with probability p."""
    a = np.zeros((n, n), dtype=np.uint8)
    nodes = np.arange(n)
    for j in range(1, k // 2 + 1):
        _connect(a, nodes, (nodes + j) % n)
    for j in range(1, k // 2 + 1):
        for u in range(n):
            w0 = (u + j) % n
            if rng.random() >= p or not a[u, w0]:
                continue
            free = np.flatnonzero(a[u] == 0)
            free = free[free != u]
            if len(free) == 0:
                continue
            w = free[rng.integers(len(free))]
            a[u, w0] = a[w0, u] = 0
            _connect(a, u, w)
    return a


def balanced_tree(branching, max_nodes):
    """Largest complete b-ary tree with at most ``max_nodes`` nodes (b >= 2)."""
    count, level = 1, 1
    while count + level * branching <= max_nodes:
        level *= branching
        count += level
    a = np.zeros((count, count), dtype=np.uint8)
    child = np.arange(1, count)
    _connect(a, child, (child - 1) // branching)
    return a


def path_graph(n):
    a = np.zeros((n, n), dtype=np.uint8)
    i = np.arange(n - 1)
    _connect(a, i, i + 1)
    return a


def erdos_renyi(n, p, rng):
    upper = np.triu(rng.random((n, n)) < p, 1)
    return (upper | upper.T).astype(np.uint8)


def barbell(n):
    """Two cliques of floor(n/3) nodes joined by a path through the remaining nodes."""
    m = n // 3
    a = np.zeros((n, n), dtype=np.uint8)
    a[:m, :m] = 1
    a[m:2 * m, m:2 * m] = 1
    np.fill_diagonal(a, 0)
    chain = [m - 1, *range(2 * m, n), m]
    for u, v in zip(chain[:-1], chain[1:]):
        _connect(a, u, v)
    return a


def random_bipartite(n, p, rng):
    left = n // 2
    cross = rng.random((left, n - left)) < p
    a = np.zeros((n, n), dtype=np.uint8)
    a[:left, left:] = cross
    a[left:, :left] = cross.T
    return a


def barabasi_albert(n, m, rng):
    """Preferential attachment grown from a star on m + 1 nodes."""
    a = np.zeros((n, n), dtype=np.uint8)
    _connect(a, 0, np.arange(1, m + 1))
    repeated = [0] * m + list(range(1, m + 1))
    for source in range(m + 1, n):
        targets = set()
        while len(targets) < m:
            targets.add(repeated[rng.integers(len(repeated))])
        targets = sorted(targets)
        _connect(a, source, np.array(targets))
        repeated.extend(targets)
        repeated.extend([source] * m)
    return a


def remove_edges(a, q, rng):
    """Drop each edge independently with probability q."""
    i, j = np.nonzero(np.triu(a, 1))
    drop = rng.random(len(i)) < q
    out = a.copy()
    out[i[drop], j[drop]] = 0
    out[j[drop], i[drop]] = 0
    return out


def family_structure(family, config, rng, stratum=None):
    """Sample size and parameters for ``family``; returns (adjacency, params).

    ``stratum`` = (k, K) restricts the size draw to the k-th of K equal
    slices of the size range, which keeps each size marginally uniform when
    k is a random rank.
    """
    family = FamilyKind(family)
    lo, hi = config.size_range
    if stratum is None:
        n = int(rng.integers(lo, hi + 1))
    else:
        k, total = stratum
        n = lo + int((k + rng.random()) / total * (hi - lo + 1))
    p = float(rng.uniform(*config.p_range))
    if family == FamilyKind.WATTS_STROGATZ:
        return watts_strogatz(n, config.ws_degree, p, rng), dict(n=n, p=p)
    if family == FamilyKind.TREE:
        b = int(rng.integers(config.branching_range[0], config.branching_range[1] + 1))
        a = path_graph(n) if b == 1 else balanced_tree(b, hi)
        return a, dict(n=a.shape[0], branching=b)
    if family == FamilyKind.ERDOS_RENYI:
        return erdos_renyi(n, p, rng), dict(n=n, p=p)
    if family == FamilyKind.BARBELL:
        return barbell(n), dict(n=n)
    if family == FamilyKind.BIPARTITE:
        return random_bipartite(n, p * config.bipartite_density, rng), dict(n=n, p=p)
    if family == FamilyKind.BARABASI_ALBERT:
        m = int(min(max(np.ceil(config.ba_attachment_scale * p), 1), n - 1))
        return barabasi_albert(n, m, rng), dict(n=n, p=p, m=m)
    return path_graph(n), dict(n=n)


# ---------------------------------------------------------------------------
# features


def clustering_coefficients(a):
    a = np.asarray(a, dtype=np.float64)
    deg = a.sum(axis=1)
    tri = ((a @ a) * a).sum(axis=1) / 2
    pairs = deg * (deg - 1) / 2
    return np.divide(tri, pairs, out=np.zeros_like(tri), where=pairs > 0)


def assign_features(instance, scheme="structural"):
    """Attach node features; the structural scheme is [degree/n, clustering, 1]."""
    if scheme not in FEATURE_SCHEMES:
        raise ConfigError(f"unknown feature scheme {scheme!r}")
    a = instance.adjacency
    n = a.shape[0]
    x = np.stack([a.sum(axis=1) / n, clustering_coefficients(a), np.ones(n)], axis=1)
    return GraphInstance(id=instance.id, adjacency=a, features=x, label=instance.label)


def generate_instance(family, config, rng, id="", stratum=None):
    a, _ = family_structure(family, config, rng, stratum)
    q = float(rng.uniform(*config.removal_range))
    a = remove_edges(a, q, rng)
    g = GraphInstance(id=id, adjacency=a, features=np.zeros((a.shape[0], 0)), label=int(family))
    return assign_features(g, config.feature_scheme)


def size_strata(classes, seed):
    """Random rank of every node among the members of its class."""
    strata = np.zeros((len(classes), 2), dtype=np.int64)
    for k in np.unique(classes):
        members = np.flatnonzero(classes == k)
        strata[members, 0] = make_rng(seed, 1 << 20, int(k)).permutation(len(members))
        strata[members, 1] = len(members)
    return strata


def generate_dataset(skeleton, config):
    """One instance per skeleton node; node i draws from its own seeded stream.

    Instance sizes are stratified within each family (see ``size_strata``).
    """
    strata = size_strata(skeleton.classes, config.seed)
    instances = [
        generate_instance(int(cls), config, make_rng(config.seed, i), id=f"g{i}", stratum=tuple(strata[i]))
        for i, cls in enumerate(skeleton.classes)
    ]
    return HierarchicalGraph(
        instances=instances,
        theta=skeleton.adjacency(),
        num_classes=len(FamilyKind),
        metadata={
            "generator": config.to_dict(),
            "skeleton": skeleton.source,
            "class_names": list(skeleton.class_names),
            "families": [FamilyKind(k).label for k in range(len(FamilyKind))],
        },
    )


def make_benchmark(seed=0, scale=1.0, config=None):
    """Seeded block-model skeleton at ``scale`` of the default class sizes, plus its instances."""
    sizes = DEFAULT_CLASS_SIZES if scale == 1 else scaled_class_sizes(scale)
    sk = synth_skeleton(sizes, rng=make_rng(seed, "skeleton"))
    return generate_dataset(sk, config or GenConfig(seed=seed))


def family_statistics(hg):
    """Per-family (count, mean nodes, mean edges, mean density) rows."""
    rows = []
    truth = hg.truth()
    for fam in FamilyKind:
        members = [hg.instances[i] for i in np.flatnonzero(truth == int(fam))]
        if not members:
            rows.append((fam, 0, 0.0, 0.0, 0.0))
            continue
        nodes = np.array([g.n for g in members], dtype=np.float64)
        edges = np.array([g.num_edges for g in members], dtype=np.float64)
        density = edges / np.maximum(nodes * (nodes - 1) / 2, 1)
        rows.append((fam, len(members), nodes.mean(), edges.mean(), density.mean()))
    return rows
