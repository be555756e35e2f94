"""Command-line entry point: ``oepg <subcommand> ...``.

Every subcommand prints a JSON document on stdout. Metric-producing
subcommands also append rows to ``<out>/results.csv``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import uuid
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .graph import generate_sbm, load_dataset, make_imbalanced_split, save_jsonl
from .trainer import TrainConfig, load_checkpoint, load_config, pretrain, save_checkpoint

CSV_COLUMNS = ("run_id", "stage", "metric", "mean", "std", "seeds")


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.mode is not None:
        changes["mode"] = args.mode
    if getattr(args, "no_descriptors", False):
        changes["use_descriptors"] = False
    return cfg.replace(**changes) if changes else cfg


def _seeds(args) -> list[int]:
    if args.seeds:
        return [int(s) for s in args.seeds.split(",")]
    return [args.seed if args.seed is not None else 0]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def append_results(out: Path, rows: list[dict]) -> Path:
    path = out / "results.csv"
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new:
            writer.writeheader()
        writer.writerows(rows)
    return path


def _row(run_id, stage, metric, values, seeds) -> dict:
    return {
        "run_id": run_id,
        "stage": stage,
        "metric": metric,
        "mean": f"{np.mean(values):.6f}",
        "std": f"{np.std(values):.6f}",
        "seeds": ";".join(str(s) for s in seeds),
    }


# ---------------------------------------------------------------- commands
def cmd_gen_sbm(args) -> dict:
    g = generate_sbm(args.classes, args.nodes_per_class, args.p_in, args.p_out, args.noise, args.seed or 0)
    path = _out(args) / args.name
    save_jsonl([g], path)
    return {"dataset": str(path), "nodes": g.num_nodes, "edges": int(len(g.edges)), "classes": args.classes}


def cmd_pretrain(args) -> dict:
    cfg = _config(args)
    data = load_dataset(args.dataset)
    ckpt = pretrain(data, cfg)
    path = _out(args) / args.name
    save_checkpoint(ckpt, path)
    return {"checkpoint": str(path), "epochs": ckpt.epoch, "loss_history": ckpt.loss_history}


def cmd_embed(args) -> dict:
    data = load_dataset(args.dataset)
    ckpt = load_checkpoint(args.checkpoint)
    emb = ev.embed_all(data, ckpt, use_descriptors=False if args.no_descriptors else None, recluster=args.recluster)
    path = _out(args) / args.name
    np.savetxt(path, emb, delimiter=",", fmt="%.17g")
    return {"embeddings": str(path), "rows": int(emb.shape[0]), "dim": int(emb.shape[1])}


def cmd_probe(args) -> dict:
    data = load_dataset(args.dataset)
    ckpt = load_checkpoint(args.checkpoint)
    emb = ev.embed_all(data, ckpt, use_descriptors=False if args.no_descriptors else None)
    labels = ev.instance_labels(data, ckpt.config.mode)
    seeds = _seeds(args)
    if args.imbalance_ratio is not None:
        edges = data[0].edges if ckpt.config.mode == "node" else None
        values = []
        for s in seeds:
            split = make_imbalanced_split(labels, args.imbalance_ratio, args.label_ratio, s, edges=edges)
            values += ev.linear_probe(emb, labels, split, seeds=[s], metric=args.metric).values
        result = ev.ProbeResult(args.metric, values, f"imbalanced ratio={args.imbalance_ratio}")
    else:
        result = ev.linear_probe(emb, labels, seeds=seeds, metric=args.metric, label_ratio=args.label_ratio)
    run_id = uuid.uuid4().hex[:12]
    stage = "no-descriptors" if args.no_descriptors else "oepg"
    csv_path = append_results(_out(args), [_row(run_id, stage, args.metric, result.values, seeds)])
    return {"run_id": run_id, "metric": args.metric, "values": result.values, "mean": result.mean, "std": result.std,
            "split": result.split, "results_csv": str(csv_path)}


def cmd_ablate(args) -> dict:
    cfg = _config(args)
    data = load_dataset(args.dataset)
    seeds = _seeds(args)
    report = ev.run_ablation(data, cfg, seeds, metric=args.metric, label_ratio=args.label_ratio)
    run_id = uuid.uuid4().hex[:12]
    rows = [_row(run_id, st, args.metric, report.values[st], seeds) for st in report.stages]
    csv_path = append_results(_out(args), rows)
    return {
        "run_id": run_id,
        "metric": args.metric,
        "stages": {st: {"values": report.values[st], "mean": report.mean(st), "std": report.std(st)} for st in report.stages},
        "monotone_seeds": report.monotone_seeds(),
        "results_csv": str(csv_path),
    }


def cmd_sweep_diversity(args) -> dict:
    cfg = _config(args)
    counts = [int(c) for c in args.classes.split(",")]
    rows = ev.run_diversity_sweep(counts, cfg, nodes_per_class=args.nodes_per_class, feature_noise=args.noise)
    run_id = uuid.uuid4().hex[:12]
    csv_rows = [_row(run_id, f"classes={r['classes']}", name, [r[name]], [cfg.seed]) for r in rows for name in ("alpha", "beta")]
    csv_path = append_results(_out(args), csv_rows)
    rho = ev.spearman(counts, [r["beta"] for r in rows]) if len(rows) > 1 else None
    return {"run_id": run_id, "rows": rows, "spearman_beta": rho, "results_csv": str(csv_path)}


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value training config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--mode", choices=("node", "graph"))
    common.add_argument("--no-descriptors", action="store_true")
    common.add_argument("--metric", choices=ev.METRICS, default="acc")
    common.add_argument("--imbalance-ratio", type=float)
    common.add_argument("--label-ratio", type=float, default=0.1)
    common.add_argument("--seeds", help="comma-separated seeds (overrides --seed)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="oepg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-sbm", parents=[common], help="write a stochastic block model dataset")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--nodes-per-class", type=int, default=100)
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--name", default="sbm.jsonl")
    p.set_defaults(func=cmd_gen_sbm)

    p = sub.add_parser("pretrain", parents=[common], help="self-supervised pre-training")
    p.add_argument("dataset")
    p.add_argument("--name", default="checkpoint.oepg")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", parents=[common], help="export frozen embeddings as CSV")
    p.add_argument("dataset")
    p.add_argument("checkpoint")
    p.add_argument("--name", default="embeddings.csv")
    p.add_argument("--recluster", action="store_true", help="fit fresh clusters on this dataset (transfer setting)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("probe", parents=[common], help="linear-probe a checkpoint")
    p.add_argument("dataset")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("ablate", parents=[common], help="staged module ablation")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-diversity", parents=[common], help="learned decay vs. SBM class count")
    p.add_argument("--classes", default="2,3,4,5,6")
    p.add_argument("--nodes-per-class", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.5)
    p.set_defaults(func=cmd_sweep_diversity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        result = args.func(args)
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stdout)
        return 2
    print(json.dumps(result, indent=2, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
