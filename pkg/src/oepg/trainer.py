"""Pre-training loop: local warmup, cluster fitting, descriptor-augmented pretext training."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ego, encoder
from .clusters import ClusterHierarchy, ClusterQueues, enqueue_and_maybe_update, init_hierarchy
from .graph import EgoSubgraph, Graph, k_hop_subgraph
from .numerics import (
    OptimizerState,
    ParameterStore,
    RandomStream,
    Tensor,
    adam_step,
    read_arrays,
    write_arrays,
)
from .numerics import autodiff as ad
from .numerics.serialize import CheckpointFormatError
from .pretext import (
    AugmentationSpec,
    GraphView,
    MaskSpec,
    augment,
    contrastive_loss,
    full_view,
    mask_substructure,
    predictive_loss,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "node"
    epochs: int = 10
    warmup_epochs: int | None = None  # None -> 20% of epochs
    batch_size: int = 32
    lr: float = 1e-3
    scales: tuple[int, ...] = (16, 12, 8, 4)
    budget: int = 4
    momentum: float = 0.999
    kmeans_refit_interval: int = 2
    local_drop: float = 0.2
    global_drop: float = 0.2
    local_mask_fraction: float = 0.25
    descriptor_mask_fraction: float = 0.25
    predictive_weight: float = 1.0
    positive_only_predictive: bool = False
    hidden_dim: int = 32
    layers: int = 3
    hops: int | None = None  # None -> layers
    seed: int = 0
    use_descriptors: bool = True
    trainable_decay: bool = True
    specialized_pretext: bool = True
    momentum_update: bool = True
    debug_invariants: bool = False

    def __post_init__(self) -> None:
        self.scales = tuple(int(s) for s in self.scales)
        if self.warmup_epochs is None:
            self.warmup_epochs = int(round(0.2 * self.epochs))
        if self.hops is None:
            self.hops = self.layers
        if self.mode not in ("node", "graph"):
            raise ValueError(f"mode must be 'node' or 'graph', got {self.mode!r}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        if any(a <= b for a, b in zip(self.scales, self.scales[1:])):
            raise ValueError("scales must be strictly decreasing")
        if self.kmeans_refit_interval < 1 or self.batch_size < 1 or self.budget < 1:
            raise ValueError("refit interval, batch size and budget must be >= 1")
        AugmentationSpec(self.local_drop, self.global_drop)
        MaskSpec(self.local_mask_fraction, self.descriptor_mask_fraction)

    @property
    def num_clusters(self) -> int:
        return sum(self.scales)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def parse_config_text(text: str) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) into a TrainConfig."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        kind = str(types[key])
        try:
            if val.lower() in ("none", "null", ""):
                values[key] = None
            elif "bool" in kind:
                if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(val)
                values[key] = val.lower() in ("true", "1", "yes")
            elif "tuple" in kind:
                values[key] = tuple(int(x) for x in val.replace("[", "").replace("]", "").split(",") if x.strip())
            elif "int" in kind:
                values[key] = int(val)
            elif "float" in kind:
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: bad value {val!r} for {key}") from exc
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())


def format_config(config: TrainConfig) -> str:
    lines = []
    for k, v in config.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


@dataclass
class Checkpoint:
    params: ParameterStore
    config: TrainConfig
    hierarchy: ClusterHierarchy | None = None
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)
    optimizer: OptimizerState | None = None
    queues: ClusterQueues | None = None


# ------------------------------------------------------------------ instances
def build_instances(dataset: list[Graph], config: TrainConfig) -> list[EgoSubgraph]:
    """One subgraph per node (node mode) or per graph (graph mode), fixed for the run."""
    if not dataset:
        raise ValueError("dataset is empty")
    if config.mode == "graph":
        return [EgoSubgraph.whole_graph(g) for g in dataset]
    return [k_hop_subgraph(g, v, config.hops) for g in dataset for v in range(g.num_nodes)]


def init_params(input_dim: int, config: TrainConfig) -> ParameterStore:
    rng = RandomStream(config.seed, 0)
    enc_cfg = encoder.EncoderConfig(input_dim, config.hidden_dim, config.layers, config.mode)
    store = ParameterStore()
    encoder.init_encoder(store, enc_cfg, rng.child(0), "encoder")
    encoder.init_encoder(store, enc_cfg, rng.child(1), "aux")
    ego.init_omni(store, config.hidden_dim, config.num_clusters, rng.child(2))
    return store


class _Batch:
    """Projected local rows and the row bookkeeping for a set of instances."""

    def __init__(self, subs: list[EgoSubgraph], params, prefix: str = "encoder"):
        self.subs = subs
        self.sizes = np.array([s.num_nodes for s in subs])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)
        self.total = int(self.sizes.sum())
        self.features = np.concatenate([s.features for s in subs], axis=0)
        self.local = encoder.project(params, self.features, prefix)

    def target_parts(self, mode: str):
        parts = []
        for b, s in enumerate(self.subs):
            ro = [s.target] if mode == "node" else np.arange(s.num_nodes)
            parts.append((self.offsets[b] + np.arange(s.num_nodes), s.edges, ro))
        return parts

    def rows(self, b: int, nodes: np.ndarray, k: int) -> np.ndarray:
        n = self.sizes[b]
        return np.where(nodes < n, self.offsets[b] + nodes, self.total + b * k + (nodes - n))


def _view_part(batch: _Batch, b: int, view: GraphView, k: int):
    return batch.rows(b, view.nodes, k), view.local_edges(), view.local_readout()


class Trainer:
    def __init__(self, dataset: list[Graph], config: TrainConfig, checkpoint: Checkpoint | None = None):
        self.config = config
        self.instances = build_instances(dataset, config)
        self.input_dim = dataset[0].feature_dim
        if checkpoint is None:
            self.params = init_params(self.input_dim, config)
            self.opt = OptimizerState(lr=config.lr)
            self.hierarchy: ClusterHierarchy | None = None
            self.queues = ClusterQueues(config.budget)
            self.epoch = 0
            self.history: list[float] = []
        else:
            self.params = checkpoint.params.copy()
            self.opt = _copy_opt(checkpoint.optimizer) if checkpoint.optimizer else OptimizerState(lr=config.lr)
            self.hierarchy = checkpoint.hierarchy.copy() if checkpoint.hierarchy else None
            self.queues = checkpoint.queues or ClusterQueues(config.budget)
            self.queues = ClusterQueues(self.queues.budget, {k: list(v) for k, v in self.queues.queues.items()})
            self.epoch = checkpoint.epoch
            self.history = list(checkpoint.loss_history)
        self.aug_spec = AugmentationSpec(
            config.local_drop, config.global_drop if config.specialized_pretext else 0.0
        )
        self.local_aug = AugmentationSpec(config.local_drop, 0.0)
        self.mask_spec = MaskSpec(config.local_mask_fraction, config.descriptor_mask_fraction)
        self.momentum_updates = 0

    # --------------------------------------------------------------- embedding
    def target_embeddings(self, params=None, batch_size: int = 64) -> np.ndarray:
        """Unextended target embeddings of every instance (no gradient)."""
        params = self.params if params is None else params
        out = []
        for start in range(0, len(self.instances), batch_size):
            subs = self.instances[start : start + batch_size]
            batch = _Batch(subs, params)
            gb = encoder.build_batch(batch.target_parts(self.config.mode))
            out.append(encoder.encode_batch(params, gb, batch.local).value)
        return np.concatenate(out, axis=0)

    def refit(self, epoch: int) -> None:
        emb = self.target_embeddings()
        seed = int(RandomStream(self.config.seed, 2, epoch).integers(2**62))
        self.hierarchy = init_hierarchy(emb, self.config.scales, seed)
        self.queues.clear()
        log.debug("epoch %d: refit %d clusters", epoch, self.hierarchy.num_clusters)

    # ------------------------------------------------------------------- steps
    def _local_loss(self, bound, subs, rng: RandomStream) -> Tensor:
        batch = _Batch(subs, bound)
        parts = []
        for view_id in range(2):
            for b, s in enumerate(subs):
                ext = ego.extend_subgraph(s, None, self.config.mode)
                aug = augment(ext, self.local_aug, rng.child(view_id, b))
                parts.append(_view_part(batch, b, full_view(aug), 0))
        z = encoder.encode_batch(bound, encoder.build_batch(parts), batch.local)
        n = len(subs)
        return contrastive_loss(z[:n], z[n:])

    def _full_loss(self, bound, subs, rng: RandomStream) -> Tensor:
        cfg = self.config
        k = cfg.num_clusters
        batch = _Batch(subs, bound)
        v = encoder.encode_batch(bound, encoder.build_batch(batch.target_parts(cfg.mode)), batch.local)

        snapshots = []
        for b in range(len(subs)):
            if cfg.momentum_update and np.linalg.norm(v.value[b]) > 0:
                flags = enqueue_and_maybe_update(self.queues, self.hierarchy, v.value[b], cfg.momentum)
                self.momentum_updates += sum(flags)
            snapshots.append(self.hierarchy.flat())
        cents = np.stack(snapshots)
        desc = ego.describe(v, cents, bound, uniform_weights=not cfg.trainable_decay)
        if cfg.debug_invariants:
            check_descriptor_invariants(desc)
            if self.queues.max_len() > self.queues.budget:
                raise TrainingError("queue budget exceeded")
        source = ad.concat([batch.local, desc.fused.reshape(len(subs) * k, cfg.hidden_dim)], axis=0)

        exts = [
            ego.ExtendedGraph(s.num_nodes, k, s.edges, ego.descriptor_edges(s.num_nodes, k, cfg.mode, s.target), cfg.mode, s.target)
            for s in subs
        ]
        parts = []
        for view_id in range(2):
            for b, ext in enumerate(exts):
                aug = augment(ext, self.aug_spec, rng.child(view_id, b))
                parts.append(_view_part(batch, b, full_view(aug), k))
        use_pred = cfg.specialized_pretext and cfg.predictive_weight > 0
        g2_parts, masked_ids = [], []
        if use_pred:
            for b, ext in enumerate(exts):
                if ext.n_local < 2:
                    continue
                g1, g2 = mask_substructure(ext, self.mask_spec, rng.child(2, b))
                parts.append(_view_part(batch, b, g1, k))
                g2_parts.append((b, g2))
                masked_ids.append(b)
        z = encoder.encode_batch(bound, encoder.build_batch(parts), source)
        n = len(subs)
        loss = contrastive_loss(z[:n], z[n : 2 * n])
        if len(masked_ids) >= 1:
            aux_local = encoder.project(bound, batch.features, "aux")
            aux_source = ad.concat([aux_local, desc.fused.reshape(n * k, cfg.hidden_dim)], axis=0)
            aux_parts = [_view_part(batch, b, g2, k) for b, g2 in g2_parts]
            e2 = encoder.encode_batch(bound, encoder.build_batch(aux_parts), aux_source, "aux")
            e1 = z[2 * n :]
            pred = predictive_loss(e1, e2, positive_only=cfg.positive_only_predictive)
            loss = loss + pred * cfg.predictive_weight
        return loss

    def run_epoch(self) -> float:
        cfg = self.config
        e = self.epoch
        local_phase = e < cfg.warmup_epochs or not cfg.use_descriptors
        if not local_phase and (e - cfg.warmup_epochs) % cfg.kmeans_refit_interval == 0:
            self.refit(e)
        rng = RandomStream(cfg.seed, 1, e)
        order = rng.child(0).permutation(len(self.instances))
        losses = []
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            subs = [self.instances[i] for i in order[start : start + cfg.batch_size]]
            bound = self.params.bind()
            brng = rng.child(1, bi)
            loss = self._local_loss(bound, subs, brng) if local_phase else self._full_loss(bound, subs, brng)
            if not np.isfinite(loss.value):
                raise TrainingError(f"non-finite loss at epoch {e}, batch {bi}")
            loss.backward()
            self.params.accumulate(bound)
            adam_step(self.params, self.opt)
            losses.append(loss.item())
        self.epoch += 1
        mean = float(np.mean(losses))
        self.history.append(mean)
        log.info("epoch %d (%s): loss %.5f", e, "local" if local_phase else "oepg", mean)
        return mean

    def run(self, until: int | None = None) -> Checkpoint:
        until = self.config.epochs if until is None else until
        while self.epoch < until:
            self.run_epoch()
        if self.config.use_descriptors and self.hierarchy is None and self.epoch >= self.config.warmup_epochs:
            self.refit(self.epoch)
        return self.checkpoint()

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            self.params.copy(),
            self.config,
            self.hierarchy.copy() if self.hierarchy else None,
            self.epoch,
            list(self.history),
            _copy_opt(self.opt),
            ClusterQueues(self.queues.budget, {k: list(v) for k, v in self.queues.queues.items()}),
        )


def _copy_opt(opt: OptimizerState) -> OptimizerState:
    return OptimizerState(
        opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step,
        {k: v.copy() for k, v in opt.m.items()},
        {k: v.copy() for k, v in opt.v.items()},
    )


def check_descriptor_invariants(desc: ego.DescriptorSet, tol: float = 1e-9) -> None:
    for name, d, raw in (
        ("first", desc.first.value, desc.raw_first_sqnorms.value),
        ("second", desc.second.value, desc.raw_second_sqnorms.value),
    ):
        norms = np.linalg.norm(d, axis=-1)
        live = raw > 1e-20
        if np.any(np.abs(norms[live] - 1.0) > tol):
            raise TrainingError(f"{name}-order descriptor lost unit norm")
    for name, w in (("first", desc.weights_first.value), ("second", desc.weights_second.value)):
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=-1) - 1.0) > tol):
            raise TrainingError(f"{name}-order attention weights left the simplex")


def warmup_local(dataset: list[Graph], config: TrainConfig) -> ParameterStore:
    """Encoder parameters after ``warmup_epochs`` of plain local contrastive training."""
    trainer = Trainer(dataset, config)
    while trainer.epoch < config.warmup_epochs:
        trainer.run_epoch()
    return trainer.params


def pretrain(dataset: list[Graph], config: TrainConfig, resume: Checkpoint | None = None) -> Checkpoint:
    return Trainer(dataset, config, resume).run()


# --------------------------------------------------------------- persistence
def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name in ckpt.params:
        arrays[name] = ckpt.params.values[name]
    if ckpt.hierarchy is not None:
        for h, cents in enumerate(ckpt.hierarchy.centroids):
            for s, c in enumerate(cents):
                arrays[f"clusters.h{h}.s{s}"] = c.reshape(1, -1)
    d = ckpt.config.hidden_dim
    if ckpt.queues is not None:
        for (h, s), q in sorted(ckpt.queues.queues.items()):
            arrays[f"queues.h{h}.s{s}"] = np.array(q).reshape(len(q), d)
    opt = ckpt.optimizer
    if opt is not None:
        for name in opt.m:
            arrays[f"adam.m.{name}"] = opt.m[name]
            arrays[f"adam.v.{name}"] = opt.v[name]
    meta = {
        "format": 1,
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "loss_history": ckpt.loss_history,
        "scales": list(ckpt.hierarchy.scales) if ckpt.hierarchy else None,
        "budget": ckpt.queues.budget if ckpt.queues else ckpt.config.budget,
        "optimizer": None
        if opt is None
        else {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "step": opt.step},
    }
    write_arrays(path, arrays, meta)


def load_checkpoint(path) -> Checkpoint:
    arrays, meta = read_arrays(path)
    try:
        config = TrainConfig.from_dict(meta["config"])
        params = ParameterStore()
        centroids: dict[tuple[int, int], np.ndarray] = {}
        queues = ClusterQueues(int(meta["budget"]))
        m, v = {}, {}
        for name, arr in arrays.items():
            if name.startswith("clusters."):
                h, s = (int(p[1:]) for p in name.split(".")[1:])
                centroids[(h, s)] = arr[0].copy()
            elif name.startswith("queues."):
                h, s = (int(p[1:]) for p in name.split(".")[1:])
                queues.queues[(h, s)] = [row.copy() for row in arr]
            elif name.startswith("adam.m."):
                m[name[len("adam.m.") :]] = arr.copy()
            elif name.startswith("adam.v."):
                v[name[len("adam.v.") :]] = arr.copy()
            else:
                params.add(name, arr)
        hierarchy = None
        if meta.get("scales"):
            scales = meta["scales"]
            hierarchy = ClusterHierarchy(
                tuple(scales), [np.stack([centroids[(h, s)] for s in range(sz)]) for h, sz in enumerate(scales)]
            )
        opt = None
        if meta.get("optimizer"):
            o = meta["optimizer"]
            opt = OptimizerState(o["lr"], o["beta1"], o["beta2"], o["eps"], int(o["step"]), m, v)
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointFormatError(f"inconsistent checkpoint contents: {exc}") from exc
    return Checkpoint(params, config, hierarchy, int(meta["epoch"]), list(meta["loss_history"]), opt, queues)
