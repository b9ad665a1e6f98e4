"""Centralised training loops and deployment."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError
from .ddqn import DDQNLearner, EpsilonSchedule
from .nets import MLP
from .policies import DDQNTrainer, MADRLPolicy, OnlineConfig, SARSATrainer
from .sarsa import LinearQ, MLPQ
from .state import N_ACTIONS, STATE_DIM, RewardWeights


@dataclass
class TrainResult:
    model: object
    losses: list = field(default_factory=list)  # per gradient step (DDQN) or TD error (SARSA)
    returns: list = field(default_factory=list)  # per finished episode
    steps: int = 0
    sim_time_s: float = 0.0

    def curve_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# leoroute-curve v1\nkind,index,value\n")
        for k, v in enumerate(self.losses):
            buf.write(f"loss,{k},{v!r}\n")
        for k, v in enumerate(self.returns):
            buf.write(f"return,{k},{v!r}\n")
        return buf.getvalue()


def _drive(engine, trainer, max_sim_s):
    limit = int(round(max_sim_s / engine.cfg.dt))
    while not trainer.finished and engine.steps < limit:
        engine.step()


def train_global(env_factory, iterations=100_000, seed=0, dims=(STATE_DIM, 128, 128, N_ACTIONS), lr=1e-4,
                 gamma=0.99, batch=128, memory=2000, sync_every=500, weights=RewardWeights(),
                 epsilon=EpsilonSchedule(), train_every=1, max_sim_s=3600.0, checkpoint_every=1000):
    """DDQN over every routing decision made in ``env_factory(policy)``.

    One iteration is one gradient step. On divergence the raised error carries
    the last finite checkpoint as ``err.checkpoint``.
    """
    learner = DDQNLearner(dims, seed=seed, lr=lr, gamma=gamma, batch=batch, memory=memory,
                          sync_every=sync_every)
    if iterations <= 0:
        return TrainResult(learner.online)
    trainer = DDQNTrainer(learner, weights, epsilon, seed=seed + 7, iterations=iterations,
                          train_every=train_every)
    engine = env_factory(trainer)
    checkpoint = learner.online.copy()
    try:
        limit = int(round(max_sim_s / engine.cfg.dt))
        while not trainer.finished and engine.steps < limit:
            engine.step()
            if learner.steps and learner.steps % checkpoint_every == 0:
                checkpoint = learner.online.copy()
    except DivergenceError as err:
        err.checkpoint = checkpoint
        raise
    return TrainResult(learner.online, list(learner.losses), list(trainer.returns), learner.steps, engine.now)


def make_value_head(head="linear", seed=0):
    if head == "linear":
        return LinearQ()
    if head == "mlp":
        return MLPQ(seed=seed)
    raise ValueError(f"unknown SARSA head {head!r}")


def train_sarsa(env_factory, iterations=100_000, seed=0, head="linear", lr=1e-3, gamma=0.99,
                weights=RewardWeights(), epsilon=EpsilonSchedule(), max_sim_s=3600.0):
    value_fn = make_value_head(head, seed)
    if iterations <= 0:
        return TrainResult(value_fn)
    trainer = SARSATrainer(value_fn, weights, epsilon, seed=seed + 7, lr=lr, gamma=gamma, iterations=iterations)
    engine = env_factory(trainer)
    _drive(engine, trainer, max_sim_s)
    if not np.all(np.isfinite(value_fn.q(np.zeros(STATE_DIM)))):
        raise DivergenceError("non-finite SARSA values")
    return TrainResult(value_fn, list(trainer.td_errors), list(trainer.returns), trainer.updates, engine.now)


def deploy_and_online_update(net: MLP, online_lr=1e-5, cadence=4, enabled=True, weights=RewardWeights(),
                             seed=0, **kw) -> MADRLPolicy:
    """Per-satellite agents seeded from ``net``; ``enabled=False`` freezes them."""
    cfg = OnlineConfig(enabled=enabled, lr=online_lr, cadence=cadence,
                       **{k: v for k, v in kw.items() if k in ("batch", "memory", "gamma")})
    rest = {k: v for k, v in kw.items() if k not in ("batch", "memory", "gamma")}
    return MADRLPolicy(net, cfg, weights, seed=seed, **rest)
