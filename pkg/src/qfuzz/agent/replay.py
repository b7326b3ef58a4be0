"""Proportional prioritized replay backed by an array sum tree."""

import numpy as np

REPLAY_CAPACITY = 50_000


class SumTree:
    """Complete binary tree over ``capacity`` leaves stored in one flat array.

    Node ``k`` has children ``2k`` and ``2k + 1``; leaves start at ``base``.
    """

    def __init__(self, capacity):
        self.capacity = int(capacity)
        base = 1
        while base < self.capacity:
            base *= 2
        self.base = base
        self.tree = np.zeros(2 * base, dtype=np.float64)

    @property
    def total(self):
        return self.tree[1]

    def __getitem__(self, idx):
        return self.tree[self.base + np.asarray(idx)]

    def update(self, idx, values):
        if np.isscalar(idx):
            self._update_one(int(idx), float(values))
            return
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        nodes = idx + self.base
        self.tree[nodes] = np.broadcast_to(values, nodes.shape)
        nodes = np.unique(nodes // 2)
        while nodes[0] >= 1:
            self.tree[nodes] = self.tree[2 * nodes] + self.tree[2 * nodes + 1]
            if nodes[0] == 1:
                break
            nodes = np.unique(nodes // 2)

    def _update_one(self, i, value):
        tree = self.tree
        node = i + self.base
        tree[node] = value
        node //= 2
        while node >= 1:
            tree[node] = tree[2 * node] + tree[2 * node + 1]
            node //= 2

    def find(self, mass):
        """Leaf index whose cumulative-sum interval contains each of ``mass``."""
        mass = np.array(mass, dtype=np.float64, copy=True)
        node = np.ones(mass.shape, dtype=np.int64)
        tree = self.tree
        while node[0] < self.base:
            left = 2 * node
            lv = tree[left]
            go_right = mass >= lv
            mass -= np.where(go_right, lv, 0.0)
            node = left + go_right
        return node - self.base


class PrioritizedReplay:
    """Fixed-capacity transition memory with proportional prioritized sampling.

    Item ``i`` is drawn with probability ``p_i**alpha / sum_j p_j**alpha``.
    New items enter at the largest priority seen so far; when full, the
    oldest item is overwritten.  Observations are stored as the raw test
    input bytes and encoded on sampling.
    """

    def __init__(self, capacity=REPLAY_CAPACITY, alpha=0.6, state_dim=0, eps=1e-3):
        if capacity <= 0:
            raise ValueError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.tree = SumTree(self.capacity)
        self.obs = [None] * self.capacity
        self.next_obs = [None] * self.capacity
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity, dtype=np.float64)
        self.dones = np.zeros(self.capacity, dtype=bool)
        self.state_dim = int(state_dim)
        shape = (self.capacity, self.state_dim)
        self.h = np.zeros(shape, dtype=np.float32)
        self.c = np.zeros(shape, dtype=np.float32)
        self.next_h = np.zeros(shape, dtype=np.float32)
        self.next_c = np.zeros(shape, dtype=np.float32)
        self.max_priority = 1.0
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done, state=None, next_state=None,
            priority=None):
        i = self.cursor
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = int(action)
        self.rewards[i] = reward
        self.dones[i] = bool(done)
        if self.state_dim:
            if state is not None:
                self.h[i], self.c[i] = state[0].reshape(-1), state[1].reshape(-1)
            if next_state is not None:
                self.next_h[i], self.next_c[i] = (next_state[0].reshape(-1),
                                                  next_state[1].reshape(-1))
        p = self.max_priority if priority is None else float(priority)
        if p <= 0:
            raise ValueError("priorities must be positive")
        self.max_priority = max(self.max_priority, p)
        self.tree.update(i, p ** self.alpha)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def probabilities(self):
        """Current sampling distribution over stored slots."""
        leaves = self.tree[np.arange(self.size)]
        return leaves / leaves.sum()

    def sample_indices(self, n, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay")
        total = self.tree.total
        idx = self.tree.find(rng.random(n) * total)
        return np.minimum(idx, self.size - 1)

    def sample(self, n, rng, beta=0.4):
        """Return ``(indices, importance_weights)``; weights are max-normalised."""
        idx = self.sample_indices(n, rng)
        probs = self.tree[idx] / self.tree.total
        w = (self.size * probs) ** (-beta)
        return idx, w / w.max()

    def update_priorities(self, idx, td_errors):
        p = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.eps
        self.max_priority = max(self.max_priority, float(p.max()))
        self.tree.update(idx, p ** self.alpha)
