"""Embedding export, linear probing, metrics, and the ablation/diversity/imbalance protocols."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata, spearmanr

from . import ego, encoder
from .clusters import init_hierarchy
from .graph import DatasetSplit, Graph, SchemaError, generate_sbm, make_imbalanced_split, stratified_split
from .numerics import RandomStream
from .numerics import autodiff as ad
from .pretext import full_view
from .trainer import Checkpoint, TrainConfig, _Batch, _view_part, build_instances, pretrain

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


class ProbeError(ValueError):
    pass


# ------------------------------------------------------------------- metrics
def accuracy(predictions, labels) -> float:
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape:
        raise MetricError("predictions and labels differ in length")
    return float(np.mean(p == y)) if len(y) else 0.0


def macro_f1(predictions, labels) -> float:
    """Unweighted mean of per-class F1 over every class seen in either input."""
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape:
        raise MetricError("predictions and labels differ in length")
    scores = []
    for c in np.union1d(p, y):
        tp = np.sum((p == c) & (y == c))
        fp = np.sum((p == c) & (y != c))
        fn = np.sum((p != c) & (y == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def roc_auc(scores, labels) -> float:
    """Mann-Whitney rank statistic; tied scores get averaged ranks."""
    s, y = np.asarray(scores, dtype=float), np.asarray(labels)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC needs both classes present")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


METRICS = ("acc", "macro-f1", "auc")


@dataclass
class ProbeResult:
    metric: str
    values: list[float]
    split: str = ""

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values))


# --------------------------------------------------------------------- embed
def embed_all(
    dataset: list[Graph],
    checkpoint: Checkpoint,
    use_descriptors: bool | None = None,
    batch_size: int = 64,
    recluster: bool = False,
) -> np.ndarray:
    """One embedding row per instance (node or graph), descriptors included by default.

    Descriptors reuse the checkpoint's clusters unless ``recluster`` is set, in
    which case a fresh hierarchy is fitted on this dataset's target embeddings.
    """
    cfg = checkpoint.config
    if dataset and dataset[0].feature_dim != checkpoint.params["encoder.input.w"].shape[0]:
        raise SchemaError(
            f"dataset feature dim {dataset[0].feature_dim} != checkpoint input dim "
            f"{checkpoint.params['encoder.input.w'].shape[0]}"
        )
    if use_descriptors is None:
        use_descriptors = cfg.use_descriptors
    params = checkpoint.params
    instances = build_instances(dataset, cfg)
    hierarchy = checkpoint.hierarchy
    if use_descriptors and recluster:
        targets = _target_table(instances, params, cfg.mode, batch_size)
        hierarchy = init_hierarchy(targets, cfg.scales, cfg.seed)
    if use_descriptors and hierarchy is None:
        raise ValueError("checkpoint has no cluster hierarchy; cannot build descriptors")
    out = []
    for start in range(0, len(instances), batch_size):
        subs = instances[start : start + batch_size]
        batch = _Batch(subs, params)
        if not use_descriptors:
            plain = [(batch.offsets[b] + np.arange(s.num_nodes), s.edges, np.arange(s.num_nodes)) for b, s in enumerate(subs)]
            out.append(encoder.encode_batch(params, encoder.build_batch(plain), batch.local).value)
            continue
        v = encoder.encode_batch(params, encoder.build_batch(batch.target_parts(cfg.mode)), batch.local)
        flat = hierarchy.flat()
        k = len(flat)
        desc = ego.describe(v, flat, params, uniform_weights=not cfg.trainable_decay)
        source = ad.concat([batch.local, desc.fused.reshape(len(subs) * k, cfg.hidden_dim)], axis=0)
        parts = []
        for b, s in enumerate(subs):
            ext = ego.ExtendedGraph(
                s.num_nodes, k, s.edges, ego.descriptor_edges(s.num_nodes, k, cfg.mode, s.target), cfg.mode, s.target
            )
            parts.append(_view_part(batch, b, full_view(ext), k))
        out.append(encoder.encode_batch(params, encoder.build_batch(parts), source).value)
    return np.concatenate(out, axis=0)


def _target_table(instances, params, mode: str, batch_size: int) -> np.ndarray:
    out = []
    for start in range(0, len(instances), batch_size):
        batch = _Batch(instances[start : start + batch_size], params)
        out.append(encoder.encode_batch(params, encoder.build_batch(batch.target_parts(mode)), batch.local).value)
    return np.concatenate(out, axis=0)


def instance_labels(dataset: list[Graph], mode: str) -> np.ndarray:
    if mode == "graph":
        if any(g.label is None for g in dataset):
            raise ValueError("graph-level evaluation needs a label on every graph")
        return np.array([g.label for g in dataset], dtype=np.int64)
    if any(g.node_labels is None for g in dataset):
        raise ValueError("node-level evaluation needs node_labels")
    return np.concatenate([g.node_labels for g in dataset])


# --------------------------------------------------------------------- probe
def _fit_logreg(x, y, n_classes, rng: RandomStream, l2=1e-4, iters=500, lr=0.5):
    w = rng.normal(0.0, 0.01, size=(x.shape[1], n_classes))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y]
    n = len(y)
    for _ in range(iters):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        w -= lr * (x.T @ g + l2 * w)
        b -= lr * g.sum(axis=0)
    return w, b


def linear_probe(
    embeddings,
    labels,
    split: DatasetSplit | None = None,
    seeds=(0,),
    metric: str = "acc",
    label_ratio: float = 0.1,
) -> ProbeResult:
    """Multinomial logistic regression on frozen embeddings.

    Full-batch gradient descent, l2 penalty 1e-4, 500 iterations, on features
    standardized with training-split statistics. Without an explicit split,
    each seed draws its own stratified split with ``label_ratio``.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    x_all = np.asarray(embeddings, dtype=np.float64)
    y_all = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y_all)
    remap = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([remap[c] for c in y_all])
    values = []
    for seed in seeds:
        sp = split if split is not None else stratified_split(y_all, label_ratio, seed)
        tr, te = np.asarray(sp.train), np.asarray(sp.test)
        if len(np.unique(y_idx[tr])) < 2:
            raise ProbeError("training split contains a single class")
        mu = x_all[tr].mean(axis=0)
        sd = x_all[tr].std(axis=0)
        sd[sd < 1e-12] = 1.0
        x = (x_all - mu) / sd
        w, b = _fit_logreg(x[tr], y_idx[tr], len(classes), RandomStream(seed, 7))
        logits = x[te] @ w + b
        pred = logits.argmax(axis=1)
        if metric == "acc":
            values.append(accuracy(pred, y_idx[te]))
        elif metric == "macro-f1":
            values.append(macro_f1(pred, y_idx[te]))
        else:
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            if len(classes) == 2:
                values.append(roc_auc(p[:, 1], y_idx[te]))
            else:
                values.append(float(np.mean([roc_auc(p[:, c], (y_idx[te] == c).astype(int)) for c in range(len(classes))])))
    desc = "explicit" if split is not None else f"stratified label_ratio={label_ratio}"
    return ProbeResult(metric, values, desc)


# ----------------------------------------------------------------- protocols
ABLATION_STAGES = ("baseline", "+ego-semantic", "+omni-granular norm", "+pretext tasks", "+momentum update")


def stage_configs(base: TrainConfig) -> dict[str, TrainConfig]:
    return {
        "baseline": base.replace(use_descriptors=False),
        "+ego-semantic": base.replace(use_descriptors=True, trainable_decay=False, specialized_pretext=False, momentum_update=False),
        "+omni-granular norm": base.replace(use_descriptors=True, trainable_decay=True, specialized_pretext=False, momentum_update=False),
        "+pretext tasks": base.replace(use_descriptors=True, trainable_decay=True, specialized_pretext=True, momentum_update=False),
        "+momentum update": base.replace(use_descriptors=True, trainable_decay=True, specialized_pretext=True, momentum_update=True),
    }


@dataclass
class AblationReport:
    metric: str
    seeds: list[int]
    stages: list[str] = field(default_factory=list)
    values: dict[str, list[float]] = field(default_factory=dict)

    def mean(self, stage: str) -> float:
        return float(np.mean(self.values[stage]))

    def std(self, stage: str) -> float:
        return float(np.std(self.values[stage]))

    def monotone_seeds(self) -> list[bool]:
        """Per seed: is the metric non-decreasing along the stage order?"""
        out = []
        for i in range(len(self.seeds)):
            row = [self.values[s][i] for s in self.stages]
            out.append(all(b >= a for a, b in zip(row, row[1:])))
        return out


def evaluate_config(
    dataset: list[Graph],
    config: TrainConfig,
    metric: str = "acc",
    split: DatasetSplit | None = None,
    label_ratio: float = 0.1,
) -> float:
    ckpt = pretrain(dataset, config)
    emb = embed_all(dataset, ckpt)
    labels = instance_labels(dataset, config.mode)
    return linear_probe(emb, labels, split, seeds=[config.seed], metric=metric, label_ratio=label_ratio).values[0]


def run_ablation(
    dataset: list[Graph],
    base: TrainConfig,
    seeds,
    metric: str = "acc",
    label_ratio: float = 0.1,
    stages=ABLATION_STAGES,
) -> AblationReport:
    """Train and probe each cumulative stage with the same seeds and probe splits."""
    configs = stage_configs(base)
    report = AblationReport(metric, list(seeds), list(stages))
    for stage in stages:
        report.values[stage] = []
        for seed in seeds:
            val = evaluate_config(dataset, configs[stage].replace(seed=seed), metric, label_ratio=label_ratio)
            report.values[stage].append(val)
            log.info("ablation %s seed %d: %s=%.4f", stage, seed, metric, val)
    return report


def run_imbalance(
    dataset: list[Graph],
    base: TrainConfig,
    seeds,
    imbalance_ratio: float = 0.1,
    label_ratio: float = 0.1,
) -> dict[str, list[float]]:
    """Macro-F1 of the descriptor-free baseline and full model on imbalanced splits."""
    graph = dataset[0]
    labels = instance_labels(dataset, base.mode)
    out: dict[str, list[float]] = {"baseline": [], "oepg": []}
    for seed in seeds:
        split = make_imbalanced_split(labels, imbalance_ratio, label_ratio, seed, edges=graph.edges)
        for name, cfg in (("baseline", base.replace(use_descriptors=False)), ("oepg", base)):
            out[name].append(evaluate_config(dataset, cfg.replace(seed=seed), "macro-f1", split=split))
    return out


def run_diversity_sweep(
    class_counts,
    config: TrainConfig,
    nodes_per_class: int = 100,
    p_in: float = 0.1,
    p_out: float = 0.01,
    feature_noise: float = 0.5,
) -> list[dict]:
    """Learned decay scalars after pre-training on SBMs with increasing class counts."""
    rows = []
    for c in class_counts:
        if c < 2:
            raise ValueError("class counts must be >= 2")
        g = generate_sbm(c, nodes_per_class, p_in, p_out, feature_noise, seed=config.seed)
        ckpt = pretrain([g], config)
        alpha, beta = ego.decays(ckpt.params)
        rows.append({"classes": int(c), "alpha": alpha.item(), "beta": beta.item()})
        log.info("diversity sweep classes=%d alpha=%.4f beta=%.4f", c, alpha.item(), beta.item())
    return rows


def spearman(xs, ys) -> float:
    return float(spearmanr(xs, ys).correlation)
