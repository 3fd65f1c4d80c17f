"""Native dataset format, TU benchmark ingestion and CSV exports.

A native dataset is a directory holding::

    manifest.json     format version, counts, labelled ids, metadata, file checksums
    instances.jsonl   one instance per line: id, n, edges, feature rows, label
    theta.txt         one "i j" instance pair per line (i < j)

Floats are written with ``repr`` (shortest round-trip form), so reloading
is bit-exact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    ChecksumError,
    DataFormatError,
    ManifestMissingError,
    TruncatedFileError,
    VersionMismatchError,
)
from .graph import GraphInstance, HierarchicalGraph, validate_instance

FORMAT_NAME = "sealgraph-dataset"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
INSTANCES = "instances.jsonl"
THETA = "theta.txt"


def atomic_write(path, data):
    """Write text or bytes to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _sha256(raw):
    return hashlib.sha256(raw).hexdigest()


def _instance_record(g):
    return json.dumps(
        {
            "id": g.id,
            "n": g.n,
            "edges": g.edges().tolist(),
            "features": g.features.tolist(),
            "label": g.label,
        },
        separators=(",", ":"),
    )


def save_dataset(hg, directory):
    """Write ``hg`` to ``directory``; returns the manifest dict."""
    directory = Path(directory)
    inst = "".join(_instance_record(g) + "\n" for g in hg.instances).encode()
    coo = sp.triu(hg.theta, k=1).tocoo()
    pairs = sorted(zip(coo.row.tolist(), coo.col.tolist()))
    theta = "".join(f"{i} {j}\n" for i, j in pairs).encode()
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "instances": len(hg.instances),
        "phi": hg.phi,
        "num_classes": hg.num_classes,
        "labeled_ids": [int(i) for i in hg.labeled_ids],
        "metadata": hg.metadata,
        "files": {
            INSTANCES: {"sha256": _sha256(inst), "lines": len(hg.instances)},
            THETA: {"sha256": _sha256(theta), "lines": len(pairs)},
        },
    }
    atomic_write(directory / INSTANCES, inst)
    atomic_write(directory / THETA, theta)
    atomic_write(directory / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _read_payload(directory, name, manifest):
    path = directory / name
    entry = manifest["files"].get(name)
    if entry is None:
        raise DataFormatError(f"manifest has no entry for {name}", directory / MANIFEST)
    if not path.exists():
        raise TruncatedFileError("file is missing", path)
    raw = path.read_bytes()
    lines = raw.decode().splitlines()
    if len(lines) < entry["lines"] or (raw and not raw.endswith(b"\n")):
        raise TruncatedFileError(f"expected {entry['lines']} complete lines, found {len(lines)}", path)
    if len(lines) > entry["lines"]:
        raise DataFormatError(f"expected {entry['lines']} lines, found {len(lines)}", path)
    return raw, lines, path


def _parse_instance(text, path, lineno, phi):
    try:
        rec = json.loads(text)
        n = int(rec["n"])
        feats = np.array(rec["features"], dtype=np.float64).reshape(n, phi)
        label = rec["label"]
        g = GraphInstance.from_edges(str(rec["id"]), n, rec["edges"], feats,
                                     None if label is None else int(label))
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise DataFormatError(f"corrupted instance record ({exc})", path, lineno) from None
    rep = validate_instance(g, phi)
    if not rep:
        raise DataFormatError(rep.message, path, lineno)
    return g


def load_dataset(directory):
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.exists():
        raise ManifestMissingError("no dataset manifest", mpath)
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"manifest is not valid JSON ({exc.msg})", mpath, exc.lineno) from None
    if manifest.get("format") != FORMAT_NAME:
        raise DataFormatError(f"not a {FORMAT_NAME} manifest", mpath)
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"format version {manifest.get('version')!r}, this reader supports {FORMAT_VERSION}", mpath
        )

    raw, lines, path = _read_payload(directory, INSTANCES, manifest)
    phi = int(manifest["phi"])
    instances = [_parse_instance(text, path, k + 1, phi) for k, text in enumerate(lines)]
    if _sha256(raw) != manifest["files"][INSTANCES]["sha256"]:
        raise ChecksumError("checksum does not match manifest", path)

    raw, lines, path = _read_payload(directory, THETA, manifest)
    total = int(manifest["instances"])
    rows, cols = [], []
    for k, text in enumerate(lines):
        try:
            i, j = (int(x) for x in text.split())
        except ValueError:
            raise DataFormatError(f"expected two integers, got {text!r}", path, k + 1) from None
        if not (0 <= i < total and 0 <= j < total) or i == j:
            raise DataFormatError(f"invalid instance pair ({i}, {j})", path, k + 1)
        rows += [i, j]
        cols += [j, i]
    if _sha256(raw) != manifest["files"][THETA]["sha256"]:
        raise ChecksumError("checksum does not match manifest", path)
    if len(instances) != total:
        raise DataFormatError(f"manifest lists {total} instances, file has {len(instances)}", path)

    theta = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(total, total))
    return HierarchicalGraph(
        instances=instances,
        theta=theta,
        num_classes=int(manifest["num_classes"]),
        labeled_ids=np.array(manifest["labeled_ids"], dtype=np.int64),
        metadata=manifest["metadata"],
    )


def datasets_equal(a, b):
    """Field-for-field equality, bit-exact on floats."""
    if (len(a.instances), a.num_classes, a.metadata) != (len(b.instances), b.num_classes, b.metadata):
        return False
    if not np.array_equal(a.labeled_ids, b.labeled_ids) or (a.theta != b.theta).nnz:
        return False
    for g, h in zip(a.instances, b.instances):
        if g.id != h.id or g.label != h.label:
            return False
        if not np.array_equal(g.adjacency, h.adjacency):
            return False
        if g.features.shape != h.features.shape or g.features.tobytes() != h.features.tobytes():
            return False
    return True


# ---------------------------------------------------------------------------
# TU benchmark format


def _tu_read(directory, name, suffix, required=True):
    path = Path(directory) / f"{name}_{suffix}.txt"
    if not path.exists():
        if required:
            raise DataFormatError("required file is missing", path)
        return None, path
    rows = []
    for k, text in enumerate(path.read_text().splitlines()):
        if not text.strip():
            continue
        try:
            rows.append((k + 1, [float(x) for x in text.replace(",", " ").split()]))
        except ValueError:
            raise DataFormatError(f"unparseable line {text!r}", path, k + 1) from None
    return rows, path


def _as_int(value, path, line):
    if value != int(value):
        raise DataFormatError(f"expected an integer, got {value}", path, line)
    return int(value)


def load_tu_dataset(directory, name):
    """Independent graphs from the TU four-file convention.

    Node labels are one-hot encoded over the sorted set of observed values;
    node attributes are appended as-is. With neither file present every
    node gets the single feature 1. Graph labels map to 0..c-1 in sorted
    order. Self-loops are dropped.
    """
    ind_rows, ind_path = _tu_read(directory, name, "graph_indicator")
    graph_of = np.array([_as_int(r[0], ind_path, k) for k, r in ind_rows], dtype=np.int64)
    num_nodes = len(graph_of)
    glab_rows, glab_path = _tu_read(directory, name, "graph_labels")
    raw_labels = [_as_int(r[0], glab_path, k) for k, r in glab_rows]
    num_graphs = len(raw_labels)
    if num_nodes and (graph_of.min() < 1 or graph_of.max() > num_graphs):
        bad = int(np.flatnonzero((graph_of < 1) | (graph_of > num_graphs))[0])
        raise DataFormatError(f"graph id {graph_of[bad]} outside 1..{num_graphs}", ind_path, ind_rows[bad][0])
    if np.any(np.diff(graph_of) < 0):
        raise DataFormatError("nodes are not grouped by graph", ind_path)

    feats = []
    nl_rows, nl_path = _tu_read(directory, name, "node_labels", required=False)
    if nl_rows is not None:
        if len(nl_rows) != num_nodes:
            raise DataFormatError(f"{len(nl_rows)} node labels for {num_nodes} nodes", nl_path)
        values = np.array([_as_int(r[0], nl_path, k) for k, r in nl_rows])
        classes, codes = np.unique(values, return_inverse=True)
        feats.append(np.eye(len(classes))[codes])
    at_rows, at_path = _tu_read(directory, name, "node_attributes", required=False)
    if at_rows is not None:
        if len(at_rows) != num_nodes:
            raise DataFormatError(f"{len(at_rows)} attribute rows for {num_nodes} nodes", at_path)
        widths = {len(r) for _, r in at_rows}
        if len(widths) != 1:
            raise DataFormatError("attribute rows have differing widths", at_path)
        feats.append(np.array([r for _, r in at_rows], dtype=np.float64))
    X = np.hstack(feats) if feats else np.ones((num_nodes, 1))

    edge_rows, edge_path = _tu_read(directory, name, "A")
    edges = {}
    for line, r in edge_rows:
        if len(r) != 2:
            raise DataFormatError(f"expected 'i, j', got {len(r)} fields", edge_path, line)
        i, j = (_as_int(v, edge_path, line) for v in r)
        for v in (i, j):
            if not 1 <= v <= num_nodes:
                raise DataFormatError(f"dangling node id {v} (have {num_nodes} nodes)", edge_path, line)
        if graph_of[i - 1] != graph_of[j - 1]:
            raise DataFormatError(f"edge ({i}, {j}) joins two graphs", edge_path, line)
        if i != j:
            edges.setdefault((i - 1, j - 1), line)
    for (i, j), line in edges.items():
        if (j, i) not in edges:
            raise DataFormatError(f"edge ({i + 1}, {j + 1}) has no reverse entry", edge_path, line)

    label_values = sorted(set(raw_labels))
    remap = {v: k for k, v in enumerate(label_values)}
    starts = np.searchsorted(graph_of, np.arange(1, num_graphs + 2))
    by_graph = [[] for _ in range(num_graphs)]
    for i, j in edges:
        if i < j:
            gid = graph_of[i] - 1
            by_graph[gid].append((i - starts[gid], j - starts[gid]))
    out = []
    for gid in range(num_graphs):
        lo, hi = starts[gid], starts[gid + 1]
        if hi == lo:
            raise DataFormatError(f"graph {gid + 1} has no nodes", ind_path)
        out.append(GraphInstance.from_edges(
            f"{name}_{gid + 1}", int(hi - lo), sorted(by_graph[gid]), X[lo:hi], remap[raw_labels[gid]]
        ))
    return out


# ---------------------------------------------------------------------------
# exports


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return atomic_write(path, buf.getvalue())


def export_embeddings(E, Psi, labels, path, ids=None):
    """id, true class, predicted class, then the flattened embedding."""
    E = np.asarray(E)
    ids = range(len(E)) if ids is None else ids
    pred = np.argmax(np.asarray(Psi), axis=1)
    header = ["id", "true", "pred"] + [f"e{j}" for j in range(E.shape[1])]
    rows = (
        [i, "" if y is None or y < 0 else int(y), int(p), *row.tolist()]
        for i, y, p, row in zip(ids, labels, pred, E)
    )
    return _write_csv(path, header, rows)


def export_attention(instance, weights, path):
    """node, normalised weight, degree for one instance."""
    weights = np.asarray(weights, dtype=np.float64)
    weights = weights / weights.sum()
    deg = instance.degrees
    return _write_csv(path, ["node", "weight", "degree"],
                      ([k, float(w), int(d)] for k, (w, d) in enumerate(zip(weights, deg))))


HISTORY_FIELDS = ("t", "n_labeled", "n_pseudo", "n_annotated", "zeta", "xi", "total", "accuracy",
                  "macro_f1", "ic_accuracy")


def export_history(history, path):
    return _write_csv(path, HISTORY_FIELDS, ([s.row()[f] for f in HISTORY_FIELDS] for s in history))


def write_table(path, header, rows):
    return _write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# model parameters


def save_model(path, ic_params, hc_params=None, info=None):
    """Weights as nested JSON lists; floats keep their exact value."""
    doc = {
        "ic": {
            "weights": {k: getattr(ic_params, k).tolist() for k in IC_WEIGHTS},
            "dropout_rate": ic_params.dropout_rate,
            "penalty_coeff": ic_params.penalty_coeff,
        },
        "hc": None if hc_params is None else {"W0": hc_params.W0.tolist(), "W1": hc_params.W1.tolist()},
        "info": info or {},
    }
    return atomic_write(path, json.dumps(doc, sort_keys=True) + "\n")


def load_model(path):
    from .hgcn import HcParams
    from .sage import SageParams

    path = Path(path)
    if not path.exists():
        raise DataFormatError("model file is missing", path)
    try:
        doc = json.loads(path.read_text())
        ic = doc["ic"]
        sage = SageParams(**{k: np.array(ic["weights"][k], dtype=np.float64) for k in IC_WEIGHTS},
                          dropout_rate=ic["dropout_rate"], penalty_coeff=ic["penalty_coeff"])
        hc = doc["hc"]
        hc = None if hc is None else HcParams(np.array(hc["W0"]), np.array(hc["W1"]))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"unreadable model file ({exc})", path) from None
    return sage, hc, doc.get("info", {})


IC_WEIGHTS = ("W0", "W1", "Ws1", "Ws2", "Wdense", "Wout")
