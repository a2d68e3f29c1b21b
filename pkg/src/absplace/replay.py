"""Proportional prioritized replay over a sum-tree."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PRIORITY_FLOOR = 1e-6
_SNAPSHOT_MAGIC = b"ABSREPLY"
_SNAPSHOT_VERSION = 1


class SumTree:
    """Complete binary tree whose internal nodes hold the sum of their children.

    Leaves live at ``tree[capacity:]`` with ``capacity`` rounded up to a power
    of two; node ``i`` has children ``2i`` and ``2i + 1`` (root at 1).
    """

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("size must be >= 1")
        self.size = int(size)
        self.capacity = 1 << max(0, (self.size - 1).bit_length())
        self.tree = np.zeros(2 * self.capacity)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def __getitem__(self, idx):
        return self.tree[self.capacity + np.asarray(idx)]

    def update(self, idx: int, value: float) -> None:
        if not 0 <= idx < self.size:
            raise IndexError(idx)
        if value < 0:
            raise ValueError("priorities must be non-negative")
        node = idx + self.capacity
        self.tree[node] = value
        node //= 2
        while node >= 1:
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1]
            node //= 2

    def find(self, values: np.ndarray) -> np.ndarray:
        """Leaf indices whose cumulative-sum interval contains each value."""
        values = np.array(values, dtype=float, ndmin=1)
        node = np.ones(len(values), dtype=np.int64)
        while node[0] < self.capacity:
            left = 2 * node
            go_right = values > self.tree[left]
            values = np.where(go_right, values - self.tree[left], values)
            node = np.where(go_right, left + 1, left)
        idx = node - self.capacity
        # rounding can walk into an empty leaf; fall back to the last positive one
        bad = self.tree[node] <= 0
        if np.any(bad):
            positive = np.flatnonzero(self.tree[self.capacity:self.capacity + self.size] > 0)
            for k in np.flatnonzero(bad):
                below = positive[positive <= idx[k]]
                idx[k] = below[-1] if len(below) else positive[0]
        return idx


@dataclass
class Batch:
    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    weights: np.ndarray


class ReplayBuffer:
    """Fixed-size ring of transitions with proportional prioritization.

    Leaf ``j`` of the tree holds ``p_j ** mu``, so a draw selects transition
    ``j`` with probability ``p_j^mu / sum_i p_i^mu``. New transitions get the
    largest priority assigned so far (1 initially).
    """

    def __init__(self, size: int, state_shape: tuple[int, ...], mu: float = 0.6, nu: float = 0.4):
        if not (0 <= mu <= 1 and 0 <= nu <= 1):
            raise ValueError("mu and nu must lie in [0, 1]")
        self.size = int(size)
        self.state_shape = tuple(state_shape)
        self.mu = float(mu)
        self.nu = float(nu)
        self.tree = SumTree(self.size)
        self.priorities = np.zeros(self.size)
        self.max_priority = 1.0
        self.states = np.zeros((self.size, *self.state_shape), dtype=np.int64)
        self.next_states = np.zeros_like(self.states)
        self.actions = np.zeros(self.size, dtype=np.int64)
        self.rewards = np.zeros(self.size)
        self.terminals = np.zeros(self.size, dtype=bool)
        self.count = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.count

    @property
    def full(self) -> bool:
        return self.count >= self.size

    def _set_priority(self, idx: int, p: float) -> None:
        self.priorities[idx] = p
        self.tree.update(idx, p ** self.mu)

    def push(self, state, action: int, reward: float, next_state, terminal: bool) -> int:
        idx = self.cursor
        self.states[idx] = state
        self.actions[idx] = action
        self.rewards[idx] = reward
        self.next_states[idx] = next_state
        self.terminals[idx] = terminal
        self._set_priority(idx, self.max_priority)
        self.cursor = (self.cursor + 1) % self.size
        self.count = min(self.count + 1, self.size)
        return idx

    def probabilities(self) -> np.ndarray:
        leaves = self.tree[np.arange(self.size)]
        return leaves / leaves.sum()

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Stratified proportional draw of ``batch_size`` transitions."""
        if not self.full:
            raise RuntimeError(f"buffer holds {self.count} of {self.size} transitions; "
                               "sampling requires a full buffer")
        total = self.tree.total
        segment = total / batch_size
        u = (np.arange(batch_size) + rng.random(batch_size)) * segment
        idx = self.tree.find(np.minimum(u, total))
        probs = self.tree[idx] / total
        w = (self.size * probs) ** -self.nu
        w = w / w.max()
        return Batch(idx, self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.terminals[idx], w)

    def update_priorities(self, indices, td_errors) -> None:
        for idx, delta in zip(np.asarray(indices), np.asarray(td_errors, dtype=float)):
            p = abs(float(delta)) + PRIORITY_FLOOR
            self._set_priority(int(idx), p)
            if p > self.max_priority:
                self.max_priority = p

    def check_tree(self, rtol: float = 1e-6) -> bool:
        t = self.tree.tree
        cap = self.tree.capacity
        children = t[2:2 * cap:2] + t[3:2 * cap:2]
        return bool(np.allclose(t[1:cap], children, rtol=rtol, atol=0.0))

    def save(self, path: str | Path) -> None:
        """Binary snapshot: header, then raw arrays in a fixed order."""
        header = struct.pack(
            "<8sIqqqddd", _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION, self.size, self.count,
            self.cursor, self.mu, self.nu, self.max_priority)
        shape = struct.pack("<I", len(self.state_shape)) + struct.pack(
            f"<{len(self.state_shape)}q", *self.state_shape)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(shape)
            for arr, dtype in ((self.priorities, "<f8"), (self.states, "<i8"),
                               (self.actions, "<i8"), (self.rewards, "<f8"),
                               (self.next_states, "<i8"), (self.terminals, "u1")):
                fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> ReplayBuffer:
        data = Path(path).read_bytes()
        head = struct.calcsize("<8sIqqqddd")
        magic, version, size, count, cursor, mu, nu, max_p = struct.unpack_from("<8sIqqqddd", data)
        if magic != _SNAPSHOT_MAGIC or version != _SNAPSHOT_VERSION:
            raise ValueError(f"not a replay snapshot (version {version})")
        (ndim,) = struct.unpack_from("<I", data, head)
        off = head + 4
        shape = struct.unpack_from(f"<{ndim}q", data, off)
        off += 8 * ndim
        buf = cls(size, shape, mu, nu)
        cell = int(np.prod(shape))

        def take(n, dtype):
            nonlocal off
            arr = np.frombuffer(data, dtype=dtype, count=n, offset=off)
            off += arr.nbytes
            return arr

        priorities = take(size, "<f8")
        buf.states[:] = take(size * cell, "<i8").reshape(buf.states.shape)
        buf.actions[:] = take(size, "<i8")
        buf.rewards[:] = take(size, "<f8")
        buf.next_states[:] = take(size * cell, "<i8").reshape(buf.states.shape)
        buf.terminals[:] = take(size, "u1").astype(bool)
        for i in range(count):
            buf._set_priority(i, float(priorities[i]))
        buf.count, buf.cursor, buf.max_priority = count, cursor, max_p
        return buf
