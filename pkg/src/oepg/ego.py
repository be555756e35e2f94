"""Ego-semantic descriptors, omni-granular normalization, fusion, extension.

All descriptor functions broadcast over leading batch axes: a target of shape
(..., d) against centroids of shape (K, d) or (..., K, d) yields descriptors
of shape (..., K, d). Cluster axes use the hierarchy-major flat order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clusters import ClusterHierarchy
from .encoder import project
from .numerics import ParameterStore, RandomStream, Tensor
from .numerics import autodiff as ad

EPS = 1e-12
LEAKY_SLOPE = 0.01
# softplus(_DECAY_INIT) == 1
_DECAY_INIT = float(np.log(np.expm1(1.0)))


def _unit_rows(x: Tensor, eps: float) -> Tensor:
    """Row-normalize; rows with norm <= eps become constant zero vectors.

    Without the mask a zero row would be divided by ``eps`` on the backward
    pass, giving gradients of order 1/eps.
    """
    norm = ad.l2_norm(x, axis=-1)
    live = Tensor((norm.value > eps).astype(np.float64))
    return x * live / ad.maximum(norm, eps)


def first_order(target_emb, centroids, eps: float = EPS) -> tuple[Tensor, Tensor]:
    """Unit-normalized differences V - C and their squared norms before normalization."""
    v = ad.as_tensor(target_emb)
    c = np.asarray(centroids.value if isinstance(centroids, Tensor) else centroids, dtype=np.float64)
    diff = ad.reshape(v, v.shape[:-1] + (1, v.shape[-1])) - c
    raw = (diff * diff).sum(axis=-1)
    return _unit_rows(diff, eps), raw


def second_order(first, eps: float = EPS) -> tuple[Tensor, Tensor]:
    """Row s of the result is X_s = [D1_k . D1_s for all k], then unit-normalized."""
    d1 = ad.as_tensor(first)
    x = d1 @ d1.swapaxes(-1, -2)
    raw = (x * x).sum(axis=-1)
    return _unit_rows(x, eps), raw


def omni_normalize(raw_sqnorms, decay) -> Tensor:
    """Softmax of ``-decay * r`` over the flattened cluster axis."""
    decay_t = ad.as_tensor(decay)
    if np.any(decay_t.value <= 0):
        raise ValueError("decay must be positive")
    return ad.softmax(-(ad.as_tensor(raw_sqnorms) * decay_t), axis=-1)


def weight_and_fuse(first, second, weights_first, weights_second, w, bias=None, slope: float = LEAKY_SLOPE) -> Tensor:
    d1, d2 = ad.as_tensor(first), ad.as_tensor(second)
    a1, a2 = ad.as_tensor(weights_first), ad.as_tensor(weights_second)
    w = ad.as_tensor(w)
    if w.shape[0] != d1.shape[-1] + d2.shape[-1]:
        raise ValueError(
            f"fusion matrix has {w.shape[0]} input rows, expected {d1.shape[-1] + d2.shape[-1]}"
        )
    wd1 = d1 * ad.reshape(a1, a1.shape + (1,))
    wd2 = d2 * ad.reshape(a2, a2.shape + (1,))
    pre = ad.concat([wd1, wd2], axis=-1) @ w
    if bias is not None:
        pre = pre + bias
    return ad.leaky_relu(pre, slope)


# ------------------------------------------------------------------ params
def init_omni(store: ParameterStore, hidden_dim: int, num_clusters: int, rng: RandomStream) -> None:
    fan_in = hidden_dim + num_clusters
    limit = np.sqrt(6.0 / (fan_in + hidden_dim))
    store.add("omni.alpha_raw", [[_DECAY_INIT]])
    store.add("omni.beta_raw", [[_DECAY_INIT]])
    store.add("omni.W", rng.uniform(-limit, limit, size=(fan_in, hidden_dim)))
    store.add("omni.bias", np.zeros((1, hidden_dim)))


def decays(params) -> tuple[Tensor, Tensor]:
    """Positive (alpha, beta) from their unconstrained raw scalars."""
    get = lambda n: params[n] if isinstance(params[n], Tensor) else Tensor(params[n])
    return ad.softplus(get("omni.alpha_raw")).reshape(()), ad.softplus(get("omni.beta_raw")).reshape(())


@dataclass
class DescriptorSet:
    first: Tensor
    second: Tensor
    raw_first_sqnorms: Tensor
    raw_second_sqnorms: Tensor
    weights_first: Tensor
    weights_second: Tensor
    fused: Tensor


def describe(target_emb, centroids, params, uniform_weights: bool = False) -> DescriptorSet:
    """Full descriptor pipeline for one target (or a batch of targets).

    ``centroids`` is the flat (K, d) matrix or a per-target (..., K, d) stack.
    With ``uniform_weights`` the attention is fixed at 1/K (no decay scalars).
    """
    if isinstance(centroids, ClusterHierarchy):
        centroids = centroids.flat()
    d1, r1 = first_order(target_emb, centroids)
    d2, r2 = second_order(d1)
    if uniform_weights:
        k = r1.shape[-1]
        a1 = Tensor(np.full(r1.shape, 1.0 / k))
        a2 = Tensor(np.full(r2.shape, 1.0 / k))
    else:
        alpha, beta = decays(params)
        a1 = omni_normalize(r1, alpha)
        a2 = omni_normalize(r2, beta)
    get = lambda n: params[n] if isinstance(params[n], Tensor) else Tensor(params[n])
    fused = weight_and_fuse(d1, d2, a1, a2, get("omni.W"), get("omni.bias"))
    return DescriptorSet(d1, d2, r1, r2, a1, a2, fused)


# --------------------------------------------------------------- extension
@dataclass
class ExtendedGraph:
    """Local nodes ``0..n_local-1`` followed by descriptor nodes ``n_local..``.

    ``desc_edges`` holds (local node, descriptor node) pairs in the extended
    indexing; ``local_edges`` the (u < v) pairs among local nodes.
    """

    n_local: int
    n_desc: int
    local_edges: np.ndarray
    desc_edges: np.ndarray
    mode: str = "node"
    target: int = 0
    features: object = None

    @property
    def num_nodes(self) -> int:
        return self.n_local + self.n_desc

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([self.local_edges.reshape(-1, 2), self.desc_edges.reshape(-1, 2)]).astype(np.int64)

    @property
    def adjacency(self) -> np.ndarray:
        n = self.num_nodes
        a = np.zeros((n, n))
        e = self.edges
        if len(e):
            a[e[:, 0], e[:, 1]] = 1.0
            a[e[:, 1], e[:, 0]] = 1.0
        return a

    def readout_nodes(self) -> np.ndarray:
        return np.arange(self.n_local)


def descriptor_edges(n_local: int, n_desc: int, mode: str, target: int = 0) -> np.ndarray:
    desc = n_local + np.arange(n_desc)
    if mode == "node":
        return np.stack([np.full(n_desc, target), desc], axis=1).astype(np.int64)
    loc, dd = np.meshgrid(np.arange(n_local), desc, indexing="ij")
    return np.stack([loc.ravel(), dd.ravel()], axis=1).astype(np.int64)


def extend_subgraph(subgraph, fused=None, mode: str = "node", params=None) -> ExtendedGraph:
    """Append descriptor nodes to an ego-subgraph.

    Node level: each descriptor is linked to the target only. Graph level:
    each descriptor is linked to every local node. When ``params`` is given
    the extended feature matrix is built too: local rows pass through the
    encoder input projection, descriptor rows are ``fused`` as is.
    """
    if mode not in ("node", "graph"):
        raise ValueError(f"unknown mode {mode!r}")
    n_desc = 0 if fused is None else int(fused.shape[0])
    n_local = subgraph.num_nodes
    ext = ExtendedGraph(
        n_local,
        n_desc,
        np.asarray(subgraph.edges, dtype=np.int64).reshape(-1, 2),
        descriptor_edges(n_local, n_desc, mode, subgraph.target),
        mode=mode,
        target=subgraph.target,
    )
    if params is not None:
        local = project(params, subgraph.features)
        ext.features = local if fused is None else ad.concat([local, ad.as_tensor(fused)], axis=0)
    return ext
