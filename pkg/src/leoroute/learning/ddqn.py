"""Double DQN: replay memory, exploration schedule and the training update."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DeadEndError, DivergenceError
from .nets import MLP, Adam, huber, huber_grad
from .state import N_ACTIONS, STATE_DIM


class ReplayMemory:
    """Fixed-capacity ring buffer; oldest transitions are evicted first."""

    def __init__(self, capacity=2000, seed=0, state_dim=STATE_DIM):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.mask2 = np.zeros((capacity, N_ACTIONS), dtype=bool)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def push(self, s, a, r, s2, mask2, done):
        i = self.pos
        self.s[i], self.a[i], self.r[i] = s, a, r
        self.s2[i], self.mask2[i], self.done[i] = s2, mask2, done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch):
        idx = self.rng.choice(self.size, size=batch, replace=False)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.mask2[idx], self.done[idx]


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 0.99
    end: float = 0.1
    decay: float = 1000.0

    def __call__(self, step: int) -> float:
        return self.end + (self.start - self.end) * math.exp(-step / self.decay)


def masked_argmax(q, mask):
    return int(np.argmax(np.where(mask, q, -np.inf)))


def act_epsilon_greedy(net, state, epsilon, mask, rng) -> int:
    mask = np.asarray(mask, dtype=bool)
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise DeadEndError("no valid action")
    if epsilon > 0 and rng.random() < epsilon:
        return int(valid[rng.integers(valid.size)])
    return masked_argmax(net(state), mask)


def ddqn_targets(online: MLP, target: MLP, r, s2, mask2, done, gamma):
    """y = r for terminal rows, else r + gamma * Q_target(s2, argmax_a Q_online(s2, a))."""
    q_on = np.where(mask2, online(s2), -np.inf)
    best = np.argmax(q_on, axis=1)
    q_tg = target(s2)[np.arange(len(best)), best]
    # rows with no valid next action contribute no bootstrap
    boot = np.where(done | ~mask2.any(axis=1), 0.0, q_tg)
    return r + gamma * boot


def ddqn_loss_and_grads(online: MLP, s, a, y, delta=1.0):
    q, acts = online.forward(s)
    n = len(a)
    diff = q[np.arange(n), a] - y
    loss = float(np.mean(huber(diff, delta)))
    g = np.zeros_like(q)
    g[np.arange(n), a] = huber_grad(diff, delta) / n
    return loss, online.backward(acts, g)


class DDQNLearner:
    """Online/target pair with replay; ``train_step`` is one gradient update."""

    def __init__(self, dims=(STATE_DIM, 128, 128, N_ACTIONS), seed=0, lr=1e-4, gamma=0.99, batch=128,
                 memory=2000, sync_every=500, optimizer=None):
        self.online = MLP(dims, seed=seed)
        self.target = self.online.copy()
        self.memory = ReplayMemory(memory, seed=seed + 1, state_dim=dims[0])
        self.opt = optimizer or Adam(self.online.params, lr=lr)
        self.gamma, self.batch, self.sync_every = gamma, batch, sync_every
        self.steps = 0
        self.losses = []

    def sync(self):
        self.target.load_from(self.online)

    def train_step(self):
        s, a, r, s2, m2, done = self.memory.sample(self.batch)
        y = ddqn_targets(self.online, self.target, r, s2, m2, done, self.gamma)
        loss, grads = ddqn_loss_and_grads(self.online, s, a, y)
        if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
            raise DivergenceError(f"non-finite loss at step {self.steps}: {loss}")
        self.opt.step(self.online.params, grads)
        self.steps += 1
        if self.steps % self.sync_every == 0:
            self.sync()
        self.losses.append(loss)
        return loss


def ddqn_train_step(learner: DDQNLearner) -> float:
    if len(learner.memory) < learner.batch:
        raise ValueError("replay memory smaller than one batch")
    return learner.train_step()
