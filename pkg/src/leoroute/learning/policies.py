"""Engine-facing learned policies: training-time collectors and deployed agents."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DeadEndError
from ..orbital import NO_NEIGHBOR
from ..routing import DecisionCostModel, RoutingPolicy
from .ddqn import DDQNLearner, EpsilonSchedule, ReplayMemory, act_epsilon_greedy, ddqn_targets, masked_argmax
from .nets import MLP, Adam, huber_grad
from .sarsa import sarsa_step
from .state import N_ACTIONS, STATE_DIM, Outcome, RewardWeights, reward


@dataclass
class Pending:
    """A decision whose next state is not known yet."""

    sat: int
    state: np.ndarray
    action: int
    resilience: float
    d_old: float
    n_hops: int


_TERMINAL_STATE = np.zeros(STATE_DIM)
_NO_ACTIONS = np.zeros(N_ACTIONS, dtype=bool)


def close_transition(engine, pkt, weights: RewardWeights, delivered=False, dropped=False):
    """Reward of ``pkt.pending`` given where the packet is now."""
    p = pkt.pending
    sat = pkt.hop_trace[-1]
    moved = len(pkt.hops) > p.n_hops
    queue_delay = pkt.hops[-1].queueing if moved else 0.0
    d_new = engine.distance_to_dst(sat, pkt.dst) if moved else p.d_old
    revisit = moved and sat in pkt.hop_trace[:-1]
    out = Outcome(queue_delay, p.d_old, d_new, revisit, p.resilience, delivered, dropped)
    return reward(out, weights, engine.hop_scale)


class _Collector(RoutingPolicy):
    """Shared bookkeeping: pending transitions, per-packet returns."""

    learns = True

    def __init__(self, weights: RewardWeights, seed: int):
        super().__init__()
        self.weights = weights
        self.rng = np.random.default_rng(seed)
        self.returns = []
        self._ret = {}
        self.env_steps = 0

    def _observe(self, engine, sat, pkt):
        s, mask, res = engine.observation(sat, pkt.dst)
        r = None
        if pkt.pending is not None:
            r = close_transition(engine, pkt, self.weights)
            self._ret[pkt.id] = self._ret.get(pkt.id, 0.0) + r
        return s, mask, res, r

    def _finish(self, engine, pkt, delivered):
        if pkt.pending is None:
            return None
        r = close_transition(engine, pkt, self.weights, delivered=delivered, dropped=not delivered)
        self.returns.append(self._ret.pop(pkt.id, 0.0) + r)
        return r

    def _remember(self, engine, sat, pkt, s, a, res):
        pkt.pending = Pending(sat, s, a, res[a], engine.distance_to_dst(sat, pkt.dst), len(pkt.hops))


class DDQNTrainer(_Collector):
    """Centralised DDQN training: every decision in the network feeds one replay memory."""

    name = "madrl-train"

    def __init__(self, learner: DDQNLearner, weights=RewardWeights(), epsilon=EpsilonSchedule(), seed=0,
                 iterations=None, train_every=1):
        super().__init__(weights, seed)
        self.learner = learner
        self.epsilon = epsilon
        self.iterations = iterations
        self.train_every = train_every

    @property
    def finished(self):
        return self.iterations is not None and self.learner.steps >= self.iterations

    def _learn(self):
        self.env_steps += 1
        if self.finished or len(self.learner.memory) < self.learner.batch:
            return
        if self.env_steps % self.train_every == 0:
            self.learner.train_step()

    def choose(self, engine, sat, pkt):
        s, mask, res, r = self._observe(engine, sat, pkt)
        if r is not None:
            self.learner.memory.push(pkt.pending.state, pkt.pending.action, r, s, mask, False)
            self._learn()
        self.decisions += 1
        try:
            a = act_epsilon_greedy(self.learner.online, s, self.epsilon(self.learner.steps), mask, self.rng)
        except DeadEndError:
            return None
        self._remember(engine, sat, pkt, s, a, res)
        return a

    def on_terminal(self, engine, pkt, delivered):
        r = self._finish(engine, pkt, delivered)
        if r is not None:
            self.learner.memory.push(pkt.pending.state, pkt.pending.action, r, _TERMINAL_STATE, _NO_ACTIONS, True)
            pkt.pending = None
            self._learn()


class SARSATrainer(_Collector):
    """On-policy SARSA with an epsilon-greedy behaviour policy."""

    name = "sarsa-train"

    def __init__(self, value_fn, weights=RewardWeights(), epsilon=EpsilonSchedule(), seed=0, lr=1e-3,
                 gamma=0.99, iterations=None):
        super().__init__(weights, seed)
        self.value_fn = value_fn
        self.epsilon = epsilon
        self.lr, self.gamma = lr, gamma
        self.iterations = iterations
        self.updates = 0
        self.td_errors = []

    @property
    def finished(self):
        return self.iterations is not None and self.updates >= self.iterations

    def _update(self, s, a, r, s2=None, a2=None):
        if self.finished:
            return
        before = self.value_fn.q(s)[a]
        target = r if s2 is None else r + self.gamma * self.value_fn.q(s2)[a2]
        sarsa_step(self.value_fn, s, a, r, s2, a2, self.lr, self.gamma, terminal=s2 is None)
        self.td_errors.append(float(target - before))
        self.updates += 1

    def choose(self, engine, sat, pkt):
        s, mask, res, r = self._observe(engine, sat, pkt)
        self.decisions += 1
        try:
            a = act_epsilon_greedy(self.value_fn, s, self.epsilon(self.updates), mask, self.rng)
        except DeadEndError:
            a = None
        if r is not None:
            p = pkt.pending
            if a is None:
                self._update(p.state, p.action, r - self.weights.drop_penalty)
            else:
                self._update(p.state, p.action, r, s, a)
        if a is not None:
            self._remember(engine, sat, pkt, s, a, res)
        return a

    def on_terminal(self, engine, pkt, delivered):
        r = self._finish(engine, pkt, delivered)
        if r is not None:
            self._update(pkt.pending.state, pkt.pending.action, r)
            pkt.pending = None


@dataclass(frozen=True)
class OnlineConfig:
    """Deployment-time learning on each satellite's own observations."""

    enabled: bool = True
    lr: float = 1e-5
    cadence: int = 4  # local transitions between updates
    batch: int = 16
    memory: int = 256
    gamma: float = 0.99


class QPolicy(RoutingPolicy):
    """Greedy routing on a value function (no exploration).

    With ``loop_guard`` a greedy action leading back to an already visited
    satellite is replaced by the best unvisited valid action, when one exists.
    """

    name = "q"

    def __init__(self, value_fn, name=None, loop_guard=True, cost=DecisionCostModel()):
        super().__init__()
        self.value_fn = value_fn
        if name:
            self.name = name
        self.loop_guard = loop_guard
        self.cost = cost

    def q_values(self, sat, s):
        return self.value_fn(s)

    def pick(self, engine, sat, pkt, s, mask):
        q = self.q_values(sat, s)
        a = masked_argmax(q, mask)
        if self.loop_guard and engine.eff_neighbors[sat, a] in pkt.hop_trace:
            fresh = mask & np.array([n != NO_NEIGHBOR and n not in pkt.hop_trace for n in engine.eff_neighbors[sat]])
            if fresh.any():
                a = masked_argmax(q, fresh)
        return a

    def choose(self, engine, sat, pkt):
        s, mask, _ = engine.observation(sat, pkt.dst)
        self.decisions += 1
        if not mask.any():
            return None
        return self.pick(engine, sat, pkt, s, mask)

    def inference_flops(self):
        return self.value_fn.flops()

    def modeled_cost(self) -> float:
        return self.decisions * self.inference_flops() / self.cost.onboard_flops_per_s

    def cost_rows(self):
        return [{"decisions": self.decisions, "flops_per_decision": self.inference_flops(),
                 "compute_s": self.modeled_cost()}]


class MADRLPolicy(QPolicy):
    """Per-satellite copies of a trained network with optional local online updates.

    A satellite's copy is created lazily on its first update; until then it
    routes with the global parameters, which is the same function.
    """

    name = "madrl"

    def __init__(self, net: MLP, online: OnlineConfig = OnlineConfig(), weights=RewardWeights(), seed=0,
                 loop_guard=True, cost=DecisionCostModel()):
        super().__init__(net, loop_guard=loop_guard, cost=cost)
        self.global_net = net
        self.online = online
        self.weights = weights
        self.seed = seed
        self.agents = {}
        self._memories = {}
        self._opts = {}
        self._counts = {}
        self.updates = 0

    def reset(self, engine):
        self.agents.clear()
        self._memories.clear()
        self._opts.clear()
        self._counts.clear()

    def agent_net(self, sat) -> MLP:
        return self.agents.get(sat, self.global_net)

    def q_values(self, sat, s):
        return self.agent_net(sat)(s)

    @property
    def learning(self):
        return self.online.enabled

    def choose(self, engine, sat, pkt):
        s, mask, res = engine.observation(sat, pkt.dst)
        if self.learning and pkt.pending is not None:
            r = close_transition(engine, pkt, self.weights)
            self._local(pkt.pending, r, s, mask, False)
        self.decisions += 1
        if not mask.any():
            return None
        a = self.pick(engine, sat, pkt, s, mask)
        if self.learning:
            pkt.pending = Pending(sat, s, a, res[a], engine.distance_to_dst(sat, pkt.dst), len(pkt.hops))
        return a

    def on_terminal(self, engine, pkt, delivered):
        if self.learning and pkt.pending is not None:
            r = close_transition(engine, pkt, self.weights, delivered=delivered, dropped=not delivered)
            self._local(pkt.pending, r, _TERMINAL_STATE, _NO_ACTIONS, True)
            pkt.pending = None

    def _local(self, p: Pending, r, s2, mask2, done):
        self.observe(p.sat, p.state, p.action, r, s2, mask2, done)

    def observe(self, sat, s, a, r, s2, mask2, done):
        """Feed one locally observed transition to ``sat``'s agent."""
        mem = self._memories.get(sat)
        if mem is None:
            mem = self._memories[sat] = ReplayMemory(self.online.memory, seed=self.seed * 100003 + sat)
        mem.push(s, a, r, s2, mask2, done)
        self._counts[sat] = self._counts.get(sat, 0) + 1
        if self._counts[sat] % self.online.cadence == 0 and len(mem) >= self.online.batch:
            self.update_agent(sat)

    def update_agent(self, sat):
        net = self.agents.get(sat)
        if net is None:
            net = self.agents[sat] = self.global_net.copy()
            self._opts[sat] = Adam(net.params, lr=self.online.lr)
        s, a, r, s2, m2, done = self._memories[sat].sample(self.online.batch)
        # the frozen global network plays the target role
        y = ddqn_targets(net, self.global_net, r, s2, m2, done, self.online.gamma)
        q, acts = net.forward(s)
        n = len(a)
        g = np.zeros_like(q)
        g[np.arange(n), a] = huber_grad(q[np.arange(n), a] - y) / n
        self._opts[sat].step(net.params, net.backward(acts, g))
        self.updates += 1
