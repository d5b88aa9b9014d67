"""Ring replay buffer with optional proportional prioritisation over a sum tree."""

from __future__ import annotations

import numpy as np


class SumTree:
    """Binary tree over ``capacity`` leaves; every internal node holds the sum of its children.

    Parents are recomputed from their children (never adjusted by deltas) so the
    root cannot drift from the sum of the leaves.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.size = 1 << max(0, (capacity - 1).bit_length())
        self.nodes = np.zeros(2 * self.size)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.size:self.size + self.capacity]

    def update(self, idx, values) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), idx.shape)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("priorities must be finite and non-negative")
        node = idx + self.size
        self.nodes[node] = values  # last write wins on duplicate indices
        node = np.unique(node >> 1)
        while node[0] >= 1:
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1]
            if node[0] == 1:
                break
            node = np.unique(node >> 1)

    def rebuild(self, leaf_values: np.ndarray) -> None:
        self.nodes[:] = 0.0
        self.nodes[self.size:self.size + len(leaf_values)] = leaf_values
        for level_start in _levels(self.size):
            span = np.arange(level_start, 2 * level_start)
            self.nodes[span] = self.nodes[2 * span] + self.nodes[2 * span + 1]

    def find(self, prefix) -> np.ndarray:
        """Leaf index whose cumulative-sum interval contains each prefix value."""
        prefix = np.array(prefix, dtype=np.float64, copy=True)
        node = np.ones(prefix.shape, dtype=np.int64)
        while node[0] < self.size:
            left = 2 * node
            lv = self.nodes[left]
            go_right = prefix >= lv
            prefix = np.where(go_right, prefix - lv, prefix)
            node = np.where(go_right, left + 1, left)
        leaf = node - self.size
        # rounding can push a draw onto an empty right-hand leaf; fall back to the last filled one
        empty = self.nodes[node] <= 0.0
        if np.any(empty):
            filled = np.flatnonzero(self.leaves() > 0)
            leaf[empty] = filled[np.searchsorted(filled, leaf[empty], side="right") - 1]
        return leaf


def _levels(size: int):
    level = size >> 1
    while level >= 1:
        yield level
        level >>= 1


class ReplayBuffer:
    """Transitions (obs, action, reward, next_obs, terminated) in ring storage.

    Storage grows geometrically up to ``capacity`` so a large nominal capacity
    costs memory only for data actually written. When ``prioritized`` the raw
    priorities ``|td| + eps`` are kept and the tree stores ``raw ** alpha``,
    so ``alpha`` can change without losing information.
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, discrete: bool,
                 prioritized: bool = False, alpha: float = 0.6, eps: float = 1e-6):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.discrete = discrete
        self.prioritized = prioritized
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.cursor = 0
        self.size = 0
        self.max_priority = 1.0
        self._alloc(min(self.capacity, 1024))
        self.tree = SumTree(self.capacity) if prioritized else None

    def _alloc(self, n: int) -> None:
        old = getattr(self, "obs", None)
        act_shape = (n,) if self.discrete else (n, self.action_dim)
        fresh = {
            "obs": np.zeros((n, self.obs_dim)),
            "next_obs": np.zeros((n, self.obs_dim)),
            "actions": np.zeros(act_shape, dtype=np.int64 if self.discrete else np.float64),
            "rewards": np.zeros(n),
            "terminated": np.zeros(n, dtype=bool),
            "raw_priority": np.zeros(n),
        }
        if old is not None:
            for k, arr in fresh.items():
                cur = getattr(self, k)
                arr[: len(cur)] = cur
        for k, arr in fresh.items():
            setattr(self, k, arr)

    def __len__(self) -> int:
        return self.size

    def add(self, obs, actions, rewards, next_obs, terminated) -> None:
        n = len(rewards)
        for j in range(n):
            i = self.cursor
            if i >= len(self.obs):
                self._alloc(min(self.capacity, 2 * len(self.obs)))
            self.obs[i] = obs[j]
            self.next_obs[i] = next_obs[j]
            self.actions[i] = actions[j]
            self.rewards[i] = rewards[j]
            self.terminated[i] = terminated[j]
            self.raw_priority[i] = self.max_priority
            if self.tree is not None:
                self.tree.update(i, self.max_priority ** self.alpha)
            self.cursor = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator, beta: float = 1.0):
        """Return (indices, importance weights normalised by their max)."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if self.tree is None:
            return rng.integers(self.size, size=batch_size), np.ones(batch_size)
        total = self.tree.total
        idx = self.tree.find(rng.random(batch_size) * total)
        probs = self.tree.leaves()[idx] / total
        weights = (self.size * probs) ** (-beta)
        return idx, weights / weights.max()

    def batch(self, idx) -> dict[str, np.ndarray]:
        return {"obs": self.obs[idx], "actions": self.actions[idx], "rewards": self.rewards[idx],
                "next_obs": self.next_obs[idx], "terminated": self.terminated[idx]}

    def update_priorities(self, idx, td_abs) -> None:
        if self.tree is None:
            return
        raw = np.abs(np.asarray(td_abs, dtype=np.float64)) + self.eps
        self.raw_priority[idx] = raw
        self.max_priority = max(self.max_priority, float(raw.max()))
        self.tree.update(idx, self.raw_priority[idx] ** self.alpha)

    def set_alpha(self, alpha: float) -> None:
        self.alpha = float(alpha)
        if self.tree is not None:
            self.tree.rebuild(self.raw_priority[: self.size] ** self.alpha)

    def resize(self, capacity: int) -> None:
        """Change capacity, keeping the most recent transitions in chronological order."""
        capacity = int(capacity)
        if capacity == self.capacity:
            return
        order = self._chronological()[-capacity:]
        keep = {k: getattr(self, k)[order].copy() for k in
                ("obs", "next_obs", "actions", "rewards", "terminated", "raw_priority")}
        self.capacity = capacity
        del self.obs
        self._alloc(max(min(capacity, 1024), len(order)))
        for k, arr in keep.items():
            getattr(self, k)[: len(order)] = arr
        self.size = len(order)
        self.cursor = self.size % capacity
        if self.prioritized:
            self.tree = SumTree(capacity)
            self.tree.rebuild(self.raw_priority[: self.size] ** self.alpha)

    def _chronological(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def state_dict(self) -> dict:
        n = self.size if self.size < self.capacity else self.capacity
        return {
            "capacity": self.capacity, "obs_dim": self.obs_dim, "action_dim": self.action_dim,
            "discrete": self.discrete, "prioritized": self.prioritized, "alpha": self.alpha,
            "eps": self.eps, "cursor": self.cursor, "size": self.size, "max_priority": self.max_priority,
            "allocated": len(self.obs),
            "obs": self.obs[:n].copy(), "next_obs": self.next_obs[:n].copy(),
            "actions": self.actions[:n].copy(), "rewards": self.rewards[:n].copy(),
            "terminated": self.terminated[:n].copy(), "raw_priority": self.raw_priority[:n].copy(),
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "ReplayBuffer":
        buf = cls(d["capacity"], d["obs_dim"], d["action_dim"], d["discrete"], d["prioritized"],
                  d["alpha"], d["eps"])
        buf._alloc(int(d["allocated"]))
        n = len(d["rewards"])
        for k in ("obs", "next_obs", "actions", "rewards", "terminated", "raw_priority"):
            getattr(buf, k)[:n] = np.asarray(d[k]).astype(getattr(buf, k).dtype)
        buf.cursor, buf.size, buf.max_priority = int(d["cursor"]), int(d["size"]), float(d["max_priority"])
        if buf.tree is not None:
            buf.tree.rebuild(buf.raw_priority[: buf.size] ** buf.alpha)
        return buf
