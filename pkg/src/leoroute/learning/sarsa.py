"""On-policy SARSA with tabular, linear or small-network value heads."""
from __future__ import annotations

from collections import defaultdict

import numpy as np

from .nets import MLP
from .state import N_ACTIONS, STATE_DIM


class TabularQ:
    def __init__(self, n_actions=N_ACTIONS):
        self.table = defaultdict(lambda: np.zeros(n_actions))

    def q(self, s):
        return self.table[s]

    def update(self, s, a, target, lr):
        row = self.table[s]
        row[a] += lr * (target - row[a])


class LinearQ:
    """Q(s, a) = w_a . [s, 1]."""

    def __init__(self, state_dim=STATE_DIM, n_actions=N_ACTIONS):
        self.w = np.zeros((state_dim + 1, n_actions))
        self.dims = (state_dim, n_actions)

    def _phi(self, s):
        return np.append(np.asarray(s, dtype=float), 1.0)

    def q(self, s):
        return self._phi(s) @ self.w

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if s.ndim == 1:
            return self.q(s)
        return np.hstack([s, np.ones((len(s), 1))]) @ self.w

    def update(self, s, a, target, lr):
        phi = self._phi(s)
        self.w[:, a] += lr * (target - phi @ self.w[:, a]) * phi

    def flops(self):
        return 2 * self.w.size

    def as_mlp(self) -> MLP:
        """The same function as a single-layer network (for saving and deployment)."""
        return MLP(self.dims, params=[self.w[:-1].copy(), self.w[-1].copy()])


class MLPQ:
    """Semi-gradient SARSA on a small ReLU network (plain SGD, no replay, no target copy)."""

    def __init__(self, dims=(STATE_DIM, 64, N_ACTIONS), seed=0):
        self.net = MLP(dims, seed=seed)

    def q(self, s):
        return self.net(s)

    def __call__(self, s):
        return self.net(s)

    def update(self, s, a, target, lr):
        out, acts = self.net.forward(np.asarray(s, dtype=float)[None, :])
        g = np.zeros_like(out)
        g[0, a] = out[0, a] - target
        for p, gp in zip(self.net.params, self.net.backward(acts, g)):
            p -= lr * gp

    def flops(self):
        return self.net.flops()

    def as_mlp(self) -> MLP:
        return self.net.copy()


def sarsa_step(value_fn, s, a, r, s2, a2, lr, gamma, terminal=False):
    """Q(s,a) <- Q(s,a) + lr * (r + gamma*Q(s2,a2) - Q(s,a)); returns value_fn."""
    target = r if terminal else r + gamma * value_fn.q(s2)[a2]
    value_fn.update(s, a, target, lr)
    return value_fn
