import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from absplace.agent import AgentConfig, Algorithm
from absplace.baselines import _sq_dists, dqn_variant, inertia, kmeans_place, lloyd


def test_m_equals_n_puts_centroids_on_gus(rng):
    pts = rng.uniform(0, 1000, size=(6, 2))
    res = kmeans_place(pts, 6, seed=1)
    assert res.inertia == pytest.approx(0.0, abs=1e-18)
    np.testing.assert_array_equal(np.sort(res.centroids, axis=0), np.sort(pts, axis=0))
    np.testing.assert_array_equal(res.centroids[res.labels], pts)


def test_separated_clusters(rng):
    a = rng.normal([100, 100], 5, size=(15, 2))
    b = rng.normal([900, 800], 5, size=(12, 2))
    res = kmeans_place(np.vstack([a, b]), 2, seed=0)
    got = sorted(map(tuple, res.centroids))
    np.testing.assert_allclose(got[0], a.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(got[1], b.mean(axis=0), atol=1e-9)


def test_beats_random_centroid_sets(rng):
    pts = rng.uniform(0, 1000, size=(30, 2))
    res = kmeans_place(pts, 4, seed=2)
    for _ in range(1000):
        c = rng.uniform(0, 1000, size=(4, 2))
        labels = np.argmin(_sq_dists(pts, c), axis=1)
        assert res.inertia <= inertia(pts, c, labels)


def test_converged_assignment_is_nearest_and_centroids_are_means(rng):
    pts = rng.uniform(0, 1000, size=(40, 2))
    res = kmeans_place(pts, 5, seed=4)
    np.testing.assert_array_equal(res.labels, np.argmin(_sq_dists(pts, res.centroids), axis=1))
    for c in range(5):
        np.testing.assert_allclose(res.centroids[c], pts[res.labels == c].mean(axis=0))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(8, 40))
def test_lloyd_monotone(seed, k, n):
    r = np.random.default_rng(seed)
    pts = r.uniform(0, 100, size=(n, 2))
    # arbitrary starts, some far outside the data so clusters go empty
    start = r.uniform(-500, 600, size=(k, 2))
    res = lloyd(pts, start)
    assert np.all(np.diff(res.history) <= 1e-9 * max(1.0, res.history[0]))
    assert res.iterations <= 100


def test_rejects_too_few_gus():
    with pytest.raises(ValueError):
        kmeans_place([(0, 0), (1, 1)], 3)


def test_deterministic_given_seed(rng):
    pts = rng.uniform(0, 1000, size=(25, 2))
    a, b = kmeans_place(pts, 3, seed=7), kmeans_place(pts, 3, seed=7)
    np.testing.assert_array_equal(a.centroids, b.centroids)


def test_dqn_variant():
    cfg = AgentConfig(lr=3e-4, seed=5)
    v = dqn_variant(cfg)
    assert v.algorithm is Algorithm.DQN and v.mu == 0 and v.nu == 0
    assert v.lr == cfg.lr and v.seed == cfg.seed
    assert cfg.algorithm is Algorithm.DDQN
