import numpy as np
import pytest

from absplace.replay import PRIORITY_FLOOR, ReplayBuffer, SumTree


def _fill(buf, n=None):
    n = buf.size if n is None else n
    for i in range(n):
        s = np.full(buf.state_shape, i)
        buf.push(s, i % 4, float(i), s + 1, i % 7 == 0)


def test_sumtree_sums_and_find():
    t = SumTree(5)
    assert t.capacity == 8
    for i, p in enumerate([1.0, 2.0, 0.5, 4.0, 2.5]):
        t.update(i, p)
    assert t.total == 10.0
    assert t.find([0.0, 0.99, 1.01, 3.2, 3.6, 7.4, 7.6, 9.99]).tolist() == [0, 0, 1, 2, 3, 3, 4, 4]


def test_push_priorities():
    buf = ReplayBuffer(4, (2, 2))
    buf.push(np.zeros((2, 2)), 0, 0.0, np.zeros((2, 2)), False)
    assert buf.priorities[0] == 1.0
    buf.update_priorities([0], [5.0])
    buf.push(np.zeros((2, 2)), 1, 0.0, np.zeros((2, 2)), False)
    assert buf.priorities[1] == pytest.approx(5.0)


def test_ring_overwrite_keeps_root_consistent():
    buf = ReplayBuffer(4, (1,))
    _fill(buf, 5)
    assert len(buf) == 4 and buf.full
    assert buf.rewards[0] == 4.0 and buf.actions[0] == 0
    assert buf.tree.total == pytest.approx(buf.priorities.sum() ** 1 if buf.mu == 1
                                           else np.sum(buf.priorities ** buf.mu))
    assert buf.check_tree()


def test_update_priorities_floor_and_abs():
    buf = ReplayBuffer(4, (1,), mu=1.0)
    _fill(buf)
    buf.update_priorities([0, 1], [0.0, -3.0])
    assert buf.priorities[0] == PRIORITY_FLOOR
    assert buf.priorities[1] == pytest.approx(3.0)
    assert buf.tree.total == pytest.approx(buf.priorities.sum(), rel=1e-12)


def test_sampling_requires_full_buffer(rng):
    buf = ReplayBuffer(8, (1,))
    _fill(buf, 5)
    with pytest.raises(RuntimeError):
        buf.sample(2, rng)


def test_equal_priorities_uniform_weights(rng):
    buf = ReplayBuffer(8, (1,))
    _fill(buf)
    b = buf.sample(8, rng)
    np.testing.assert_allclose(b.weights, 1.0)
    np.testing.assert_allclose(buf.probabilities(), 1 / 8)


@pytest.mark.parametrize("mu,expected", [(1.0, 2 / 3), (0.6, 2 ** 0.6 / (2 ** 0.6 + 1))])
def test_two_leaf_probabilities(mu, expected):
    buf = ReplayBuffer(2, (1,), mu=mu)
    _fill(buf)
    buf.update_priorities([0, 1], [2.0 - PRIORITY_FLOOR, 1.0 - PRIORITY_FLOOR])
    assert buf.probabilities()[0] == pytest.approx(expected, rel=1e-9)
    if mu == 0.6:
        assert buf.probabilities()[0] == pytest.approx(0.6025, abs=5e-5)


def test_empirical_sampling_law(rng):
    buf = ReplayBuffer(16, (1,), mu=0.6, nu=0.4)
    _fill(buf)
    buf.update_priorities(np.arange(16), rng.uniform(0.1, 5.0, 16))
    counts = np.zeros(16)
    for _ in range(100_000 // 50):
        b = buf.sample(50, rng)
        np.add.at(counts, b.indices, 1)
        assert b.weights.max() == 1.0 and np.all(b.weights <= 1.0)
    np.testing.assert_allclose(counts / counts.sum(), buf.probabilities(), atol=0.02)


def test_weights_decrease_with_probability(rng):
    buf = ReplayBuffer(8, (1,), mu=0.6, nu=0.4)
    _fill(buf)
    buf.update_priorities(np.arange(8), np.arange(1, 9, dtype=float))
    b = buf.sample(64, rng)
    p = buf.probabilities()[b.indices]
    order = np.argsort(p)
    assert np.all(np.diff(b.weights[order]) <= 1e-15)


def test_degenerate_exponents_uniform(rng):
    buf = ReplayBuffer(8, (1,), mu=0.0, nu=0.0)
    _fill(buf)
    buf.update_priorities(np.arange(8), np.arange(1, 9, dtype=float))
    np.testing.assert_allclose(buf.probabilities(), 1 / 8)
    assert np.all(buf.sample(16, rng).weights == 1.0)
    buf2 = ReplayBuffer(8, (1,), mu=0.6, nu=0.0)
    _fill(buf2)
    buf2.update_priorities(np.arange(8), np.arange(1, 9, dtype=float))
    assert np.all(buf2.sample(16, rng).weights == 1.0)


def test_tree_consistency_after_many_ops(rng):
    buf = ReplayBuffer(300, (1,), mu=0.6)
    for i in range(10_000):
        if buf.full and rng.random() < 0.5:
            idx = rng.integers(0, 300, size=4)
            buf.update_priorities(idx, rng.normal(0, 10, size=4))
        else:
            buf.push(np.zeros(1), 0, 0.0, np.zeros(1), False)
    assert buf.check_tree()
    leaves = np.sum(buf.priorities ** buf.mu)
    assert abs(buf.tree.total - leaves) / leaves < 1e-6


def test_snapshot_round_trip(tmp_path, rng):
    buf = ReplayBuffer(6, (2, 2), mu=0.6, nu=0.4)
    for i in range(8):
        buf.push(np.full((2, 2), i), i % 4, -0.5 * i, np.full((2, 2), i + 1), i == 3)
    buf.update_priorities([1, 4], [3.0, 0.2])
    buf.save(tmp_path / "replay.bin")
    back = ReplayBuffer.load(tmp_path / "replay.bin")
    for name in ("states", "next_states", "actions", "rewards", "terminals", "priorities"):
        np.testing.assert_array_equal(getattr(back, name), getattr(buf, name))
    assert (back.count, back.cursor, back.max_priority) == (buf.count, buf.cursor, buf.max_priority)
    np.testing.assert_array_equal(back.tree.tree, buf.tree.tree)
    r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
    np.testing.assert_array_equal(buf.sample(4, r1).indices, back.sample(4, r2).indices)
    (tmp_path / "bad.bin").write_bytes(b"garbage" * 10)
    with pytest.raises(ValueError):
        ReplayBuffer.load(tmp_path / "bad.bin")
