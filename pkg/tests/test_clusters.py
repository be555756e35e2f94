import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oepg.clusters import (
    AssignmentError,
    ClusterHierarchy,
    ClusterQueues,
    assign,
    enqueue_and_maybe_update,
    init_hierarchy,
    kmeans,
    momentum_update,
)
from oepg.numerics import ConfigurationError, RandomStream
from oepg.trainer import TrainConfig


def test_default_scales_and_budget():
    cfg = TrainConfig()
    assert cfg.scales == (16, 12, 8, 4) and cfg.budget == 4 and cfg.momentum == 0.999


def test_hierarchy_validation():
    with pytest.raises(ConfigurationError):
        ClusterHierarchy((2, 3), [np.zeros((2, 1)), np.zeros((3, 1))])
    with pytest.raises(ConfigurationError):
        ClusterHierarchy((3, 2), [np.zeros((2, 1)), np.zeros((2, 1))])
    h = ClusterHierarchy((3, 2), [np.arange(6.0).reshape(3, 2), -np.arange(4.0).reshape(2, 2)])
    assert h.num_clusters == 5 and h.flat_index(1, 1) == 4
    np.testing.assert_array_equal(h.flat()[4], [-2.0, -3.0])


def test_init_hierarchy_identical_points():
    pts = np.tile([[1.5, -2.0, 0.5]], (20, 1))
    h = init_hierarchy(pts, (6, 3), seed=0)
    for c in h.centroids:
        assert np.all(c == pts[0])


def test_init_hierarchy_too_few_points():
    with pytest.raises(ConfigurationError):
        init_hierarchy(np.zeros((5, 2)), (6, 3), seed=0)


def brute_force_two_means(x):
    best, best_c = np.inf, None
    n = len(x)
    for mask in itertools.product([0, 1], repeat=n - 1):
        lab = np.array((0,) + mask)
        if lab.sum() == 0:
            continue
        cents = np.stack([x[lab == j].mean(axis=0) for j in (0, 1)])
        sse = ((x - cents[lab]) ** 2).sum()
        if sse < best:
            best, best_c = sse, cents
    return best_c


def test_two_blobs_match_exhaustive_partition():
    rng = np.random.default_rng(0)
    for trial in range(5):
        x = np.concatenate([rng.normal(0, 0.3, (6, 2)), rng.normal(5, 0.3, (6, 2))])
        got = init_hierarchy(x, (2,), seed=trial).centroids[0]
        want = brute_force_two_means(x)
        got = got[np.argsort(got[:, 0])]
        want = want[np.argsort(want[:, 0])]
        np.testing.assert_allclose(got, want, atol=1e-6)


def test_kmeans_no_empty_clusters_with_duplicates():
    x = np.array([[0.0, 0.0]] * 8 + [[1.0, 1.0], [2.0, 2.0]])
    c = kmeans(x, 3, RandomStream(1))
    assert np.all(np.isfinite(c))


def test_init_hierarchy_deterministic():
    x = np.random.default_rng(3).normal(size=(40, 4))
    a, b = init_hierarchy(x, (5, 2), 7), init_hierarchy(x, (5, 2), 7)
    for ca, cb in zip(a.centroids, b.centroids):
        assert np.array_equal(ca, cb)


# --------------------------------------------------------------------- assign
def test_assign_exact_match_and_ties():
    c0 = np.eye(4)
    h = ClusterHierarchy((4, 2), [c0, np.ones((2, 4))])
    assert assign(c0[3], h) == [3, 0]


def test_assign_zero_norm_and_dim_errors():
    h = ClusterHierarchy((2,), [np.eye(2)])
    with pytest.raises(AssignmentError):
        assign(np.zeros(2), h)
    with pytest.raises(AssignmentError):
        assign(np.ones(3), h)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_property_assign_matches_exhaustive_scan(d, seed):
    rng = np.random.default_rng(seed)
    scales = tuple(sorted(rng.choice(np.arange(1, 21), size=2, replace=False).tolist(), reverse=True))
    h = ClusterHierarchy(scales, [rng.normal(size=(s, d)) for s in scales])
    v = rng.normal(size=d)
    for hi, got in enumerate(assign(v, h)):
        sims = []
        for c in h.centroids[hi]:
            sims.append(sum(a * b for a, b in zip(v, c)) / (np.sqrt(sum(a * a for a in v)) * np.sqrt(sum(b * b for b in c))))
        assert got == int(np.argmax(sims))


# ------------------------------------------------------------------- momentum
def test_momentum_hand_example():
    np.testing.assert_allclose(momentum_update([1.0, 0.0], [[0.0, 1.0], [0.0, 3.0]], 0.5, 2), [0.5, 1.0])


def test_momentum_identity_limit_and_contract():
    c = np.array([0.3, -0.2])
    assert np.array_equal(momentum_update(c, np.ones((4, 2)), 1.0, 4), c)
    with pytest.raises(ValueError):
        momentum_update(c, np.ones((3, 2)), 0.5, 4)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(1, 6), st.integers(0, 10_000))
def test_property_momentum_affine(m, budget, seed):
    rng = np.random.default_rng(seed)
    c, q = rng.normal(size=5), rng.normal(size=(budget, 5))
    want = m * c + (1 - m) * q.mean(axis=0)
    np.testing.assert_allclose(momentum_update(c, q, m, budget), want, rtol=0, atol=1e-12)


def test_unit_budget_updates_every_time():
    h = ClusterHierarchy((2,), [np.eye(2)])
    q = ClusterQueues(1)
    flags = [enqueue_and_maybe_update(q, h, v, 0.5) for v in ([1.0, 0.1], [0.2, 1.0], [1.0, 0.0])]
    assert flags == [[True], [True], [True]]


def test_eight_embeddings_budget_four_two_updates():
    h = ClusterHierarchy((2,), [np.array([[1.0, 0.0], [0.0, 1.0]])])
    q = ClusterQueues(4)
    stream = [np.array([1.0, 0.01 * i]) for i in range(8)]
    flags = [enqueue_and_maybe_update(q, h, v, 0.9)[0] for v in stream]
    assert sum(flags) == 2 and flags[3] and flags[7]
    assert q.get(0, 0) == []
    # replay oracle
    c = np.array([1.0, 0.0])
    for chunk in (stream[:4], stream[4:]):
        c = 0.9 * c + 0.1 * np.mean(chunk, axis=0)
    np.testing.assert_allclose(h.centroids[0][0], c, atol=1e-15)


def test_queue_budget_invariant_over_stream():
    rng = np.random.default_rng(0)
    h = ClusterHierarchy((5, 3), [rng.normal(size=(5, 4)), rng.normal(size=(3, 4))])
    q = ClusterQueues(4)
    for _ in range(2000):
        enqueue_and_maybe_update(q, h, rng.normal(size=4), 0.999)
        assert q.max_len() < 4


def test_queue_budget_validation():
    with pytest.raises(ConfigurationError):
        ClusterQueues(0)
