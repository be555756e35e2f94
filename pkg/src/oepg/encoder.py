"""Sum-aggregation message-passing encoder (GIN-style, epsilon fixed at 0).

Parameters live in a ParameterStore under ``{prefix}.input.{w,b}`` for the
input projection and ``{prefix}.layer{i}.{w1,b1,w2,b2}`` for the per-layer
two-layer perceptrons. Forward functions accept either a ParameterStore
(constants) or the dict returned by ``ParameterStore.bind()`` (tracked).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .numerics import ParameterStore, RandomStream, Tensor
from .numerics import autodiff as ad


class ShapeError(ValueError):
    pass


@dataclass
class EncoderConfig:
    input_dim: int
    hidden_dim: int = 32
    layers: int = 3
    mode: str = "node"

    def __post_init__(self) -> None:
        if self.layers < 1 or self.hidden_dim < 1 or self.input_dim < 1:
            raise ValueError("layers and dimensions must be >= 1")
        if self.mode not in ("node", "graph"):
            raise ValueError(f"mode must be 'node' or 'graph', got {self.mode!r}")


def _glorot(rng: RandomStream, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder(store: ParameterStore, config: EncoderConfig, rng: RandomStream, prefix: str = "encoder") -> None:
    d = config.hidden_dim
    store.add(f"{prefix}.input.w", _glorot(rng, config.input_dim, d))
    store.add(f"{prefix}.input.b", np.zeros((1, d)))
    for i in range(config.layers):
        store.add(f"{prefix}.layer{i}.w1", _glorot(rng, d, d))
        store.add(f"{prefix}.layer{i}.b1", np.zeros((1, d)))
        store.add(f"{prefix}.layer{i}.w2", _glorot(rng, d, d))
        store.add(f"{prefix}.layer{i}.b2", np.zeros((1, d)))


def param(params: ParameterStore | Mapping[str, Tensor], name: str) -> Tensor:
    value = params[name]
    return value if isinstance(value, Tensor) else Tensor(value)


def num_layers(params, prefix: str = "encoder") -> int:
    i = 0
    while f"{prefix}.layer{i}.w1" in params:
        i += 1
    return i


def project(params, features, prefix: str = "encoder") -> Tensor:
    """Input layer: d_in -> d affine map applied row-wise."""
    x = ad.as_tensor(features)
    w = param(params, f"{prefix}.input.w")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"{prefix}.input: features have width {x.shape[-1]}, expected {w.shape[0]}")
    return x @ w + param(params, f"{prefix}.input.b")


def propagate(params, adjacency: sp.spmatrix, h: Tensor, prefix: str = "encoder") -> list[Tensor]:
    """Run every message-passing layer; returns the output of each layer."""
    adjacency = sp.csr_matrix(adjacency)
    if adjacency.shape[0] != h.shape[0]:
        raise ShapeError(f"adjacency has {adjacency.shape[0]} rows but features have {h.shape[0]}")
    outs = []
    n_layers = num_layers(params, prefix)
    for i in range(n_layers):
        w1 = param(params, f"{prefix}.layer{i}.w1")
        if h.shape[-1] != w1.shape[0]:
            raise ShapeError(f"{prefix}.layer{i}: input width {h.shape[-1]}, expected {w1.shape[0]}")
        agg = h + ad.spmm(adjacency, h)
        z = ad.relu(agg @ w1 + param(params, f"{prefix}.layer{i}.b1"))
        h = z @ param(params, f"{prefix}.layer{i}.w2") + param(params, f"{prefix}.layer{i}.b2")
        outs.append(h)
        if i < n_layers - 1:
            h = ad.relu(h)
    return outs


def encode(adjacency, features, params, prefix: str = "encoder") -> list[Tensor]:
    """Per-layer node embeddings; element 0 is the input projection."""
    adjacency = sp.csr_matrix(np.asarray(adjacency) if not sp.issparse(adjacency) else adjacency)
    h0 = project(params, features, prefix)
    return [h0] + propagate(params, adjacency, h0, prefix)


def readout(embeddings: Sequence[Tensor] | Tensor, subset) -> Tensor:
    """Mean of final-layer rows over ``subset``."""
    final = embeddings[-1] if isinstance(embeddings, (list, tuple)) else embeddings
    idx = np.asarray(subset, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("readout subset must be non-empty")
    pool = sp.csr_matrix((np.full(idx.size, 1.0 / idx.size), (np.zeros(idx.size, int), idx)), shape=(1, final.shape[0]))
    return ad.spmm(pool, final).reshape(final.shape[-1])


def target_embedding(subgraph, params, mode: str = "node", prefix: str = "encoder") -> Tensor:
    """Embedding the descriptors are built from (pass over the unextended subgraph)."""
    embs = encode(subgraph.adjacency, subgraph.features, params, prefix)
    if mode == "node":
        return embs[-1][subgraph.target]
    return readout(embs, np.arange(subgraph.num_nodes))


# ------------------------------------------------------------------ batching
@dataclass
class GraphBatch:
    """Disjoint union of graphs that share one source row table.

    ``rows[i]`` is the source-table row feeding batch node ``i``; ``pool`` is a
    (graphs x nodes) mean-pooling matrix implementing each graph's readout.
    """

    adjacency: sp.csr_matrix
    rows: np.ndarray
    pool: sp.csr_matrix

    @property
    def num_nodes(self) -> int:
        return len(self.rows)

    @property
    def num_graphs(self) -> int:
        return self.pool.shape[0]


def build_batch(parts: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> GraphBatch:
    """Assemble a batch from ``(source_rows, local_edges, readout_local_idx)`` triples.

    ``local_edges`` index into ``source_rows`` of the same part.
    """
    rows, r_e, c_e, pr, pc, pv = [], [], [], [], [], []
    offset = 0
    for g, (src, edges, ro) in enumerate(parts):
        src = np.asarray(src, dtype=np.int64)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        ro = np.asarray(ro, dtype=np.int64).ravel()
        if ro.size == 0:
            raise ValueError(f"batch part {g} has an empty readout set")
        rows.append(src)
        r_e += [edges[:, 0] + offset, edges[:, 1] + offset]
        c_e += [edges[:, 1] + offset, edges[:, 0] + offset]
        pr.append(np.full(ro.size, g))
        pc.append(ro + offset)
        pv.append(np.full(ro.size, 1.0 / ro.size))
        offset += len(src)
    r = np.concatenate(r_e) if r_e else np.zeros(0, np.int64)
    c = np.concatenate(c_e) if c_e else np.zeros(0, np.int64)
    adj = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(offset, offset))
    pool = sp.csr_matrix(
        (np.concatenate(pv), (np.concatenate(pr), np.concatenate(pc))), shape=(len(parts), offset)
    )
    return GraphBatch(adj, np.concatenate(rows), pool)


def gather_rows(source: Tensor, rows: np.ndarray) -> Tensor:
    sel = sp.csr_matrix((np.ones(len(rows)), (np.arange(len(rows)), rows)), shape=(len(rows), source.shape[0]))
    return ad.spmm(sel, source)


def encode_batch(params, batch: GraphBatch, source: Tensor, prefix: str = "encoder") -> Tensor:
    """Readout embedding (graphs x d) of every graph in ``batch``.

    ``source`` rows must already be in the hidden space.
    """
    h0 = gather_rows(source, batch.rows)
    final = propagate(params, batch.adjacency, h0, prefix)[-1]
    return ad.spmm(batch.pool, final)
