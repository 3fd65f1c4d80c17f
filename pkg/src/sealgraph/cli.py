"""Command-line entry point.

Every command reads defaults, then ``--config``, then flags. Tables go to
stdout as CSV; files go under ``--out``. Exit codes: 0 success, 2 bad
configuration, 3 unreadable or invalid data, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from ._alloc import tune_malloc
from .config import coerce, field_names, load_config
from .errors import ConfigError, DataFormatError, SealError, ValidationError
from .experiments import run_method, sweep
from .graph import GraphInstance, HierarchicalGraph, normalize_theta, split, validate
from .hgcn import HcParams, hc_forward, hc_loss
from .metrics import accuracy, macro_f1
from .numerics import finite_diff_check, make_rng
from .sage import SageData, SageParams, averaged_attention, embed_all, sage_loss
from .seal import FALSE_RATE_GRID, false_prediction_rate
from .syngen import (
    GenConfig,
    assign_features,
    family_statistics,
    generate_dataset,
    load_citation_skeleton,
    make_benchmark,
)

log = logging.getLogger("sealgraph")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

COMMANDS = ("gen", "train-sage", "seal-ci", "seal-ai", "eval", "sweep", "diag", "export")


def _emit(header, rows, out=None):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    text = buf.getvalue()
    (out or sys.stdout).write(text)
    return text


def _require(cfg, key):
    value = getattr(cfg, key)
    if value is None:
        raise ConfigError(f"--{key} is required for this command")
    return Path(value)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg):
    out = _require(cfg, "out")
    if cfg.skeleton == "citation":
        sk = load_citation_skeleton(cfg.citation_edges, cfg.citation_classes)
        hg = generate_dataset(sk, GenConfig(seed=cfg.seed))
    else:
        hg = make_benchmark(cfg.seed, cfg.scale)
    validate(hg).raise_for_error()
    dio.save_dataset(hg, out)
    rows = [(fam.label, count, round(nodes, 2), round(edges, 2), round(dens, 4))
            for fam, count, nodes, edges, dens in family_statistics(hg)]
    text = _emit(["family", "count", "mean_nodes", "mean_edges", "mean_density"], rows)
    dio.atomic_write(out / "stats.csv", text)
    return EXIT_OK


def _load(cfg):
    hg = dio.load_dataset(_require(cfg, "data"))
    validate(hg).raise_for_error()
    return hg


def _train(cfg, method):
    hg = _load(cfg)
    out = _require(cfg, "out")
    run = run_method(hg, method, cfg.seal_config(), cfg.seed, cfg.labeled_for(method), cfg.test)
    truth = hg.truth()
    hc = run.result.hc_params if run.result is not None else None
    dio.save_model(out / "model.json", run.ic_params, hc,
                   info={"method": method, "seed": cfg.seed, "labeled": cfg.labeled_for(method),
                         "test": cfg.test})
    # per-instance predictions: split tag, truth, then Psi and Gamma columns
    tag = np.full(len(hg), "unlabeled", dtype=object)
    tag[run.train_ids] = "train"
    tag[run.test_ids] = "test"
    if run.result is not None and len(run.result.annotated):
        tag[run.result.annotated] = "annotated"
    c = hg.num_classes
    header = ["id", "split", "true"] + [f"psi{j}" for j in range(c)]
    if run.Gamma is not None:
        header += [f"gamma{j}" for j in range(c)]
    rows = []
    for i in range(len(hg)):
        row = [i, tag[i], int(truth[i])] + [float(x) for x in run.Psi[i]]
        if run.Gamma is not None:
            row += [float(x) for x in run.Gamma[i]]
        rows.append(row)
    dio.write_table(out / "predictions.csv", header, rows)
    if run.result is not None:
        dio.export_history(run.result.history, out / "history.csv")
    metrics = [(method, cfg.seed, run.n_labeled, len(run.test_ids), run.accuracy, run.macro_f1)]
    if run.result is not None:
        metrics[0] += (len(run.result.history), len(run.result.annotated))
    header = ["method", "seed", "labeled", "test", "accuracy", "macro_f1"]
    if run.result is not None:
        header += ["iterations", "annotated"]
    text = _emit(header, metrics)
    dio.atomic_write(out / "metrics.csv", text)
    return EXIT_OK


def cmd_eval(cfg):
    hg = _load(cfg)
    model_dir = _require(cfg, "model")
    ic, hc, info = dio.load_model(model_dir / "model.json")
    seed = info.get("seed", cfg.seed)
    _, test_ids = split(hg, info.get("labeled", cfg.labeled_for("sage")), info.get("test", cfg.test),
                        make_rng(seed, "split"))
    emb = embed_all(ic, SageData(hg.instances))
    truth = hg.truth()[test_ids]
    rows = []
    pred = np.argmax(emb.Psi[test_ids], axis=1)
    rows.append(("ic", len(test_ids), accuracy(pred, truth), macro_f1(pred, truth, hg.num_classes)))
    if hc is not None:
        gamma = hc_forward(hc, emb.E, normalize_theta(hg))
        pred = np.argmax(gamma[test_ids], axis=1)
        rows.append(("hc", len(test_ids), accuracy(pred, truth), macro_f1(pred, truth, hg.num_classes)))
    _emit(["classifier", "test", "accuracy", "macro_f1"], rows)
    return EXIT_OK


def cmd_sweep(cfg):
    hg = _load(cfg)
    rows = sweep(hg, cfg)
    seeds = list(range(cfg.seed, cfg.seed + cfg.repeat))
    for row in rows:
        log.info("size=%d method=%s per-seed=%s", row.size, row.method, row.per_seed)
    text = _emit(["size", "method", "accuracy", "macro_f1"],
                 [(r.size, r.method, r.accuracy, r.macro_f1) for r in rows])
    if cfg.out is not None:
        out = Path(cfg.out)
        dio.atomic_write(out / "sweep.csv", text)
        per_seed = [(r.size, r.method, s, a) for r in rows for s, a in zip(seeds, r.per_seed)]
        dio.write_table(out / "sweep_per_seed.csv", ["size", "method", "seed", "accuracy"], per_seed)
    return EXIT_OK


def gradcheck_report(seed):
    """Finite-difference relative errors for the SAGE and HC losses on small seeded inputs."""
    rng = make_rng(seed, "gradcheck")
    n = 6
    a = np.triu((rng.random((n, n)) < 0.5).astype(np.uint8), 1)
    a = a + a.T
    g = assign_features(GraphInstance("check", a, np.zeros((n, 3)), 1))
    params = SageParams.init(3, 7, rng, h=8, v=4, d=8, r=3, u=48, dropout_rate=0.0)
    sage_err = finite_diff_check(
        lambda ws: sage_loss(params, [g], weights=ws), [w.copy() for w in params.weights()]
    )
    m = 5
    theta = np.triu((rng.random((m, m)) < 0.5).astype(np.int8), 1)
    theta = theta + theta.T
    E = rng.standard_normal((m, 6))
    th = normalize_theta(HierarchicalGraph([g] * m, theta, 3, labeled_ids=[]))
    hcp = HcParams.init(6, 3, rng, hidden=4)
    labeled = np.array([0, 2, 3])
    hc_err = finite_diff_check(
        lambda ws: hc_loss(hcp, E, th, labeled, np.array([0, 1, 2]), weights=ws),
        [w.copy() for w in hcp.weights()],
    )
    return sage_err, hc_err


def cmd_diag(cfg):
    sage_err, hc_err = gradcheck_report(cfg.seed)
    _emit(["loss", "max_relative_error"], [("sage", sage_err), ("hc", hc_err)])
    if cfg.model is not None:
        pred_path = Path(cfg.model) / "predictions.csv"
        if not pred_path.exists():
            raise DataFormatError("no predictions to analyse", pred_path)
        with pred_path.open() as fh:
            rows = list(csv.DictReader(fh))
        gcols = sorted((k for k in rows[0] if k.startswith("gamma")), key=lambda k: int(k[5:])) if rows else []
        if not gcols:
            raise DataFormatError("predictions carry no hierarchical-classifier columns", pred_path)
        rows = [r for r in rows if r["split"] != "train" and int(r["true"]) >= 0]
        gamma = np.array([[float(r[k]) for k in gcols] for r in rows])
        truth = np.array([int(r["true"]) for r in rows])
        curve = false_prediction_rate(gamma, truth, FALSE_RATE_GRID)
        text = _emit(["lambda", "false_prediction_rate"], curve)
        if cfg.out is not None:
            dio.atomic_write(Path(cfg.out) / "false_prediction_rate.csv", text)
    return EXIT_OK


def cmd_export(cfg):
    hg = _load(cfg)
    out = _require(cfg, "out")
    ic, hc, info = dio.load_model(_require(cfg, "model") / "model.json")
    emb = embed_all(ic, SageData(hg.instances), keep_attention=True)
    seed = info.get("seed", cfg.seed)
    _, test_ids = split(hg, info.get("labeled", cfg.labeled_for("sage")), info.get("test", cfg.test),
                        make_rng(seed, "split"))
    truth = hg.truth()
    dio.export_embeddings(emb.E[test_ids], emb.Psi[test_ids], truth[test_ids], out / "embeddings.csv",
                          ids=test_ids)
    for i in test_ids[:cfg.attention]:
        dio.export_attention(hg.instances[i], averaged_attention(emb.attention[i]),
                             out / f"attention_{hg.instances[i].id}.csv")
    history = Path(cfg.model) / "history.csv"
    if history.exists():
        dio.atomic_write(out / "history.csv", history.read_bytes())
    print(f"exported {len(test_ids)} embeddings and {min(cfg.attention, len(test_ids))} attention maps")
    return EXIT_OK


HANDLERS = {
    "gen": cmd_gen,
    "train-sage": lambda cfg: _train(cfg, "sage"),
    "seal-ci": lambda cfg: _train(cfg, "seal-ci"),
    "seal-ai": lambda cfg: _train(cfg, "seal-ai"),
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "diag": cmd_diag,
    "export": cmd_export,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(prog="sealgraph", allow_abbrev=False, description="Semi-supervised graph classification on hierarchical graphs.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat 'key = value' configuration file")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    for name in field_names():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar="VALUE")
    return parser


def main(argv=None):
    tune_malloc()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = {k: coerce(k, v) for k, v in vars(args).items() if k in field_names() and v is not None}
        cfg = load_config(args.config, overrides)
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SealError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
