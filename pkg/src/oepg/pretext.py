"""Local-global augmentations, substructure masking and the two pretext losses."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .ego import ExtendedGraph
from .numerics import RandomStream, Tensor
from .numerics import autodiff as ad


class LossError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass
class AugmentationSpec:
    local_drop: float = 0.2
    global_drop: float = 0.2

    def __post_init__(self) -> None:
        for name in ("local_drop", "global_drop"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")


@dataclass
class MaskSpec:
    local_mask_fraction: float = 0.25
    descriptor_mask_fraction: float = 0.25

    def __post_init__(self) -> None:
        for name in ("local_mask_fraction", "descriptor_mask_fraction"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass
class GraphView:
    """Node subset of an extended graph; all indices use the extended numbering."""

    nodes: np.ndarray
    edges: np.ndarray
    readout: np.ndarray

    def local_edges(self) -> np.ndarray:
        """Edges re-indexed to positions within ``nodes`` (which is sorted)."""
        return np.searchsorted(self.nodes, self.edges.reshape(-1, 2)).astype(np.int64)

    def local_readout(self) -> np.ndarray:
        return np.searchsorted(self.nodes, self.readout).astype(np.int64)


def full_view(ext: ExtendedGraph) -> GraphView:
    return GraphView(np.arange(ext.num_nodes), ext.edges, ext.readout_nodes())


# --------------------------------------------------------------- augmentation
def augment(ext: ExtendedGraph, spec: AugmentationSpec, rng: RandomStream, max_tries: int = 100) -> ExtendedGraph:
    """Drop a uniform share of local edges and of descriptor links.

    At node level a resampled drop set keeps the target attached to at least
    one remaining node whenever it had a neighbour to begin with.
    """
    local = ext.local_edges.reshape(-1, 2)
    n_local_drop = math.floor(spec.local_drop * len(local))
    n_desc_drop = math.floor(spec.global_drop * ext.n_desc)
    desc_ids = np.arange(ext.n_local, ext.num_nodes)
    had_link = ext.mode == "node" and (
        np.any(local == ext.target) or np.any(ext.desc_edges[:, 0] == ext.target)
    )
    for attempt in range(max_tries):
        keep_local = np.ones(len(local), bool)
        if n_local_drop:
            keep_local[rng.choice(len(local), n_local_drop, replace=False)] = False
        dropped = rng.choice(desc_ids, n_desc_drop, replace=False) if n_desc_drop else np.zeros(0, int)
        keep_desc = ~np.isin(ext.desc_edges[:, 1], dropped)
        new_local, new_desc = local[keep_local], ext.desc_edges[keep_desc]
        if not had_link or np.any(new_local == ext.target) or np.any(new_desc[:, 0] == ext.target):
            break
    else:
        # every sampled drop set isolated the target: keep one of its local edges
        idx = np.flatnonzero((local == ext.target).any(axis=1))
        if len(idx):
            keep_local[idx[0]] = True
            new_local = local[keep_local]
    return ExtendedGraph(ext.n_local, ext.n_desc, new_local, new_desc, ext.mode, ext.target, ext.features)


def mask_substructure(ext: ExtendedGraph, spec: MaskSpec, rng: RandomStream) -> tuple[GraphView, GraphView]:
    """Split the extended graph into a remainder (with the target) and a masked part.

    The masked local nodes form a connected set grown breadth-first from a
    random non-target seed without passing through the target.
    """
    if ext.n_local < 2 or ext.n_desc < 1:
        raise ContractError("masking needs >= 2 local nodes and >= 1 descriptor")
    want_local = min(math.ceil(spec.local_mask_fraction * ext.n_local), ext.n_local - 1)
    want_desc = min(math.ceil(spec.descriptor_mask_fraction * ext.n_desc), ext.n_desc)

    adj: list[list[int]] = [[] for _ in range(ext.n_local)]
    for u, v in ext.local_edges.reshape(-1, 2):
        adj[u].append(int(v))
        adj[v].append(int(u))
    candidates = [i for i in range(ext.n_local) if i != ext.target]
    seed = int(rng.choice(candidates))
    masked = [seed]
    seen = {seed, ext.target}
    queue = deque([seed])
    while queue and len(masked) < want_local:
        u = queue.popleft()
        for v in sorted(adj[u]):
            if v not in seen:
                seen.add(v)
                masked.append(v)
                queue.append(v)
                if len(masked) == want_local:
                    break
    masked_desc = rng.choice(np.arange(ext.n_local, ext.num_nodes), want_desc, replace=False)
    in_g2 = np.zeros(ext.num_nodes, bool)
    in_g2[masked] = True
    in_g2[masked_desc] = True
    edges = ext.edges
    g1_nodes, g2_nodes = np.flatnonzero(~in_g2), np.flatnonzero(in_g2)
    both1 = ~in_g2[edges[:, 0]] & ~in_g2[edges[:, 1]]
    both2 = in_g2[edges[:, 0]] & in_g2[edges[:, 1]]
    g1_read = g1_nodes[g1_nodes < ext.n_local]
    g1 = GraphView(g1_nodes, edges[both1], g1_read)
    g2 = GraphView(g2_nodes, edges[both2], g2_nodes)
    return g1, g2


# --------------------------------------------------------------------- losses
def _check_norms(*arrays) -> None:
    for a in arrays:
        if np.any(np.linalg.norm(a.value, axis=-1) == 0):
            raise LossError("zero-norm embedding: cosine similarity undefined")


def _unit(x: Tensor) -> Tensor:
    return x / ad.l2_norm(x, axis=-1)


def contrastive_loss(anchors, positives, negatives=None) -> Tensor:
    """Negative mean positive cosine plus mean negative cosine.

    ``anchors``/``positives`` are (B, d). ``negatives`` is (B, n, d); when None,
    every other instance's positive view serves as a negative.
    """
    zi, zj = ad.as_tensor(anchors), ad.as_tensor(positives)
    _check_norms(zi, zj)
    ui, uj = _unit(zi), _unit(zj)
    pos = (ui * uj).sum(axis=-1).mean()
    if negatives is None:
        b = zi.shape[0]
        if b < 2:
            return -pos
        sim = ui @ uj.T
        off = Tensor(1.0 - np.eye(b))
        neg = (sim * off).sum() * (1.0 / (b * (b - 1)))
        return neg - pos
    zn = ad.as_tensor(negatives)
    if zn.shape[-2] == 0:
        return -pos
    _check_norms(zn)
    un = _unit(zn)
    b, n = zn.shape[0], zn.shape[1]
    neg = (ad.reshape(ui, (b, 1, ui.shape[-1])) * un).sum() * (1.0 / (b * n))
    return neg - pos


def predictive_loss(remainder, masked, negatives=None, positive_only: bool = False) -> Tensor:
    """Cross-reconstruction loss between remainder and masked-part embeddings.

    ``-log sigmoid(e1 . e2) - mean_neg log(1 - sigmoid(e1 . e2_neg))``,
    averaged over the batch. Negatives default to the other instances'
    masked parts; ``positive_only`` keeps just the first term.
    """
    e1, e2 = ad.as_tensor(remainder), ad.as_tensor(masked)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    single = e1.ndim == 1
    if single:
        e1, e2 = e1.reshape(1, -1), e2.reshape(1, -1)
        if negatives is not None:
            negatives = ad.as_tensor(negatives).reshape(1, -1, e1.shape[-1])
    b = e1.shape[0]
    pos = -ad.log_sigmoid((e1 * e2).sum(axis=-1)).mean()
    if positive_only:
        return pos
    if negatives is None:
        if b < 2:
            return pos
        logits = e1 @ e2.T
        off = Tensor(1.0 - np.eye(b))
        neg = -(ad.log_sigmoid(-logits) * off).sum() * (1.0 / (b * (b - 1)))
        return pos + neg
    zn = ad.as_tensor(negatives)
    if zn.shape[-2] == 0:
        return pos
    n = zn.shape[1]
    logits = (ad.reshape(e1, (b, 1, e1.shape[-1])) * zn).sum(axis=-1)
    return pos - ad.log_sigmoid(-logits).sum() * (1.0 / (b * n))
