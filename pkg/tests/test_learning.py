import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leoroute.errors import DeadEndError
from leoroute.learning import (MLP, N_ACTIONS, STATE_DIM, DDQNLearner, EpsilonSchedule, LinearQ,
                               ReplayMemory, RewardWeights, TabularQ, act_epsilon_greedy, ddqn_train_step,
                               deploy_and_online_update, encode_state, load_mlp, reward, sarsa_step, save_mlp,
                               train_global)
from leoroute.learning.ddqn import ddqn_loss_and_grads, ddqn_targets
from leoroute.learning.state import Outcome
from leoroute.resilience import FailureEvent
from leoroute.simcore import Engine
from leoroute.traffic import TrafficPattern

from oracles import bellman_fixed_point, central_difference, huber_scalar, mlp_forward_loops
from support import torus_config, torus_optimality

R = 6921.0


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v) * R


NBRS = [unit([1, 0.1, 0]), unit([1, -0.1, 0]), unit([1, 0, 0.1]), unit([1, 0, -0.1])]


def test_pristine_neighbourhood_maps_to_boundaries():
    s = encode_state(unit([1, 0, 0]), NBRS, [0.0] * 4, unit([0, 1, 0]), [1.0] * 4, R)
    assert s.shape == (STATE_DIM,)
    assert np.all(s[15:19] == -1.0) and np.all(s[22:26] == 1.0)
    assert np.all(np.abs(s) <= 1.0)


def test_missing_neighbour_sentinel():
    nbrs = NBRS[:3] + [None]
    s = encode_state(unit([1, 0, 0]), nbrs, [0.2, 0.2, 0.2, None], unit([0, 1, 0]), [0.5] * 3 + [0.0], R)
    assert np.all(s[12:15] == 0.0)
    assert s[18] == 1.0 and s[25] == -1.0


def test_encoding_injective_on_sampled_grid():
    rng = np.random.default_rng(0)
    rows = []
    for _ in range(10_000):
        cur = unit(rng.standard_normal(3))
        occ = list(rng.integers(0, 11, 4) / 10)
        res = list(rng.integers(0, 11, 4) / 10)
        rows.append(encode_state(cur, NBRS, occ, unit([0, 0, 1]), res, R))
    assert len(np.unique(np.round(np.array(rows), 12), axis=0)) == 10_000


def test_favourable_step_reward():
    w = RewardWeights()
    r = reward(Outcome(0.0, 3000.0, 2000.0, False, 1.0, delivered=True), w, 1000.0)
    assert r == pytest.approx(1.0 + 0.5 + 10.0)


def test_revisit_is_strictly_penalised():
    w = RewardWeights()
    base = Outcome(0.004, 2000.0, 2000.0, False, 0.6)
    rv = Outcome(0.004, 2000.0, 2000.0, True, 0.6)
    assert reward(rv, w, 1000.0) == pytest.approx(-1.0 + 0.5 * 0.6 - 1.0 * 0.4)
    assert reward(rv, w, 1000.0) < reward(base, w, 1000.0)


def test_scripted_three_hop_ledger():
    w = RewardWeights()
    steps = [Outcome(0.0, 3000.0, 2000.0, False, 0.9), Outcome(0.01, 2000.0, 1000.0, False, 0.8),
             Outcome(0.002, 1000.0, 0.0, False, 1.0, delivered=True)]
    hand = [1.0 + 0.45, -1.0 + 1.0 + 0.4, -0.2 + 1.0 + 0.5 + 10.0]
    got = [reward(o, w, 1000.0) for o in steps]
    assert got == pytest.approx(hand, abs=1e-12)
    assert sum(got) == pytest.approx(sum(hand), abs=1e-9)


def test_reward_weight_signs_enforced():
    with pytest.raises(ValueError):
        RewardWeights(w_queue=0.5)
    with pytest.raises(ValueError):
        RewardWeights(w_resilience=-0.1)


def test_episode_returns_are_sums_of_step_rewards():
    from leoroute.learning import DDQNTrainer

    learner = DDQNLearner((STATE_DIM, 16, N_ACTIONS), seed=0, batch=8, memory=50_000)
    trainer = DDQNTrainer(learner, seed=1)
    pattern = TrafficPattern("uniform", 64e3 * 200, seed=5)
    Engine(torus_config(traffic=(pattern,), horizon=0.1), trainer).run()
    terminal = learner.memory.done[: len(learner.memory)]
    # every finished episode pushed one terminal transition; its return collects all its steps
    assert len(trainer.returns) == int(terminal.sum()) > 0
    assert sum(trainer.returns) == pytest.approx(float(learner.memory.r[: len(learner.memory)].sum()), abs=1e-9)


class ConstQ:
    def __init__(self, q):
        self.q = np.asarray(q, dtype=float)

    def __call__(self, s):
        return self.q


def test_epsilon_zero_is_argmax():
    rng = np.random.default_rng(0)
    assert act_epsilon_greedy(ConstQ([0, 3, 1, 2]), None, 0.0, [True] * 4, rng) == 1
    assert act_epsilon_greedy(ConstQ([0, 3, 1, 2]), None, 0.0, [True, False, True, True], rng) == 3


def test_epsilon_one_uniform_over_valid():
    rng = np.random.default_rng(1)
    mask = [True, False, True, True]
    n = 100_000
    draws = [act_epsilon_greedy(ConstQ([0, 9, 1, 2]), None, 1.0, mask, rng) for _ in range(n)]
    freq = np.bincount(draws, minlength=4) / n
    assert freq[1] == 0.0
    assert np.all(np.abs(freq[[0, 2, 3]] - 1 / 3) < 0.01)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.lists(st.booleans(), min_size=4, max_size=4).filter(any), st.integers(0, 1000))
def test_masked_action_never_selected(eps, mask, seed):
    rng = np.random.default_rng(seed)
    q = ConstQ(np.random.default_rng(seed + 1).standard_normal(4))
    for _ in range(200):
        assert mask[act_epsilon_greedy(q, None, eps, mask, rng)]


def test_empty_mask_is_dead_end():
    with pytest.raises(DeadEndError):
        act_epsilon_greedy(ConstQ([0, 0, 0, 0]), None, 0.5, [False] * 4, np.random.default_rng(0))


def test_epsilon_schedule():
    e = EpsilonSchedule()
    assert e(0) == pytest.approx(0.99)
    assert e(1000) == pytest.approx(0.1 + 0.89 * math.exp(-1))
    assert e(100_000) == pytest.approx(0.1, abs=1e-12)


def tiny(seed=0, dims=(3, 4, 2)):
    return MLP(dims, seed=seed)


def test_all_terminal_targets_equal_rewards():
    net = tiny()
    r = np.array([0.5, -1.0, 2.0])
    y = ddqn_targets(net, net.copy(), r, np.ones((3, 3)), np.ones((3, 2), bool), np.ones(3, bool), 0.9)
    assert np.array_equal(y, r)


def test_double_q_target_and_loss_match_hand_forward_pass():
    online = MLP((2, 3, 2), params=[np.array([[0.5, -0.2, 0.1], [0.3, 0.8, -0.4]]), np.array([0.0, 0.1, 0.2]),
                                    np.array([[1.0, -0.5], [0.2, 0.7], [-0.3, 0.4]]), np.array([0.05, -0.05])])
    target = MLP((2, 3, 2), params=[np.array([[0.1, 0.4, -0.6], [0.9, -0.1, 0.3]]), np.array([0.2, 0.0, -0.1]),
                                    np.array([[0.6, 0.2], [-0.4, 0.9], [0.5, -0.7]]), np.array([0.0, 0.1])])
    s = np.array([0.3, -0.7])
    s2 = np.array([0.9, 0.4])
    q_on = mlp_forward_loops(online.params, s2)
    q_tg = mlp_forward_loops(target.params, s2)
    a_on = int(np.argmax(q_on))
    # the two networks disagree about the best next action
    assert a_on != int(np.argmax(q_tg))
    y_hand = 0.25 + 0.9 * q_tg[a_on]
    y = ddqn_targets(online, target, np.array([0.25]), s2[None], np.ones((1, 2), bool), np.zeros(1, bool), 0.9)
    assert y[0] == pytest.approx(y_hand, abs=1e-6)
    # and not the single-network max of the target net
    assert abs(y[0] - (0.25 + 0.9 * max(q_tg))) > 1e-3
    loss, _ = ddqn_loss_and_grads(online, s[None], np.array([1]), y)
    assert loss == pytest.approx(huber_scalar(mlp_forward_loops(online.params, s)[1] - y_hand), abs=1e-6)


def test_masked_next_state_restricts_argmax():
    net = MLP((1, 2), params=[np.array([[1.0, 2.0]]), np.zeros(2)])
    y = ddqn_targets(net, net, np.zeros(1), np.ones((1, 1)), np.array([[True, False]]), np.zeros(1, bool), 1.0)
    assert y[0] == 1.0


@pytest.mark.parametrize("dims", [(5, 7, 3), (4, 6, 5, 3)])
def test_gradients_match_finite_differences(dims):
    rng = np.random.default_rng(4)
    net = MLP(dims, seed=3)
    for k in range(0, len(net.params), 2):
        net.params[k + 1][:] = rng.uniform(0.05, 0.2, net.params[k + 1].shape)  # keep ReLUs away from kinks
    s = rng.standard_normal((6, dims[0])) * 0.5
    a = rng.integers(0, dims[-1], 6)
    y = rng.standard_normal(6) * 3  # some residuals beyond the Huber knee
    _, grads = ddqn_loss_and_grads(net, s, a, y)
    num = central_difference(lambda: ddqn_loss_and_grads(net, s, a, y)[0], net.params)
    for g, n in zip(grads, num):
        assert np.allclose(g, n, rtol=1e-4, atol=1e-8)


def test_target_sync_copies_parameters():
    L = DDQNLearner((STATE_DIM, 8, N_ACTIONS), seed=0, batch=4, sync_every=3)
    rng = np.random.default_rng(0)
    for _ in range(10):
        L.memory.push(rng.standard_normal(STATE_DIM), rng.integers(4), 1.0, rng.standard_normal(STATE_DIM),
                      np.ones(4, bool), False)
    ddqn_train_step(L)
    assert not np.array_equal(L.online.flat(), L.target.flat())
    ddqn_train_step(L)
    ddqn_train_step(L)
    assert np.array_equal(L.online.flat(), L.target.flat())


def test_train_step_needs_a_full_batch():
    L = DDQNLearner((STATE_DIM, 8, N_ACTIONS), batch=4)
    with pytest.raises(ValueError):
        ddqn_train_step(L)


def test_replay_memory_capacity_and_fifo_eviction():
    m = ReplayMemory(2000, state_dim=1)
    for k in range(2500):
        m.push([k], 0, float(k), [k], np.ones(4, bool), False)
        assert len(m) <= 2000
    assert sorted(m.r) == [float(k) for k in range(500, 2500)]
    s, *_ = m.sample(128)
    assert len(np.unique(s)) == 128


def test_sarsa_examples():
    q = TabularQ()
    q.table["s"][:] = [2.0, 0, 0, 0]
    sarsa_step(q, "s", 0, 0.0, "s", 0, 0.3, 1.0)
    assert q.q("s")[0] == 2.0
    q = TabularQ()
    sarsa_step(q, "a", 1, 1.0, "b", 0, 0.5, 0.0)
    assert q.q("a")[1] == 0.5


def test_sarsa_two_state_chain_converges_to_bellman_solution():
    # fixed policy: action 0 everywhere; s0 -> s1 with r=1, s1 -> s0 with r=0
    P = [[0, 1], [1, 0]]
    Rw = [1.0, 0.0]
    gamma = 0.9
    ref = bellman_fixed_point(P, Rw, gamma)
    q = TabularQ()
    s = 0
    for k in range(200_000):
        s2 = 1 - s
        sarsa_step(q, s, 0, Rw[s], s2, 0, 0.05, gamma)
        s = s2
    assert [q.q(0)[0], q.q(1)[0]] == pytest.approx(list(ref), abs=1e-3)


def test_linear_head_update_moves_toward_target():
    q = LinearQ()
    s = np.full(STATE_DIM, 0.1)
    sarsa_step(q, s, 2, 1.0, None, None, 0.1, 0.0, terminal=True)
    assert q.q(s)[2] > 0 and np.all(q.q(s)[[0, 1, 3]] == 0)


def test_zero_iterations_returns_initial_network():
    res = train_global(lambda p: None, iterations=0, seed=5, dims=(STATE_DIM, 16, N_ACTIONS))
    assert np.array_equal(res.model.flat(), MLP((STATE_DIM, 16, N_ACTIONS), seed=5).flat())
    assert res.losses == [] and res.steps == 0


def test_training_is_reproducible():
    pattern = TrafficPattern("uniform", 64e3 * 200, seed=3)

    def run():
        return train_global(lambda p: Engine(torus_config(traffic=(pattern,), horizon=1e9), p), iterations=300,
                            seed=2, dims=(STATE_DIM, 16, N_ACTIONS), batch=16)

    a, b = run(), run()
    assert np.array_equal(a.model.flat(), b.model.flat()) and a.losses == b.losses


@pytest.mark.slow
def test_torus_training_learns_shortest_paths(torus_model):
    L = torus_model.losses
    n = len(L) // 10
    assert np.mean(L[-n:]) < np.mean(L[:n])
    assert torus_optimality(torus_model.model) >= 0.95


def test_model_file_round_trip(tmp_path):
    net = MLP((STATE_DIM, 8, N_ACTIONS), seed=9)
    f = tmp_path / "m.txt"
    save_mlp(net, f, seed=9, step=12, extra={"config_hash": "abc"})
    back, header = load_mlp(f)
    assert np.array_equal(back.flat(), net.flat()) and back.dims == net.dims
    assert header["seed"] == 9 and header["step"] == 12 and header["config_hash"] == "abc"
    save_mlp(back, tmp_path / "m2.txt", seed=9, step=12, extra={"config_hash": "abc"})
    assert (tmp_path / "m2.txt").read_bytes() == f.read_bytes()


def test_load_rejects_foreign_files(tmp_path):
    f = tmp_path / "x.txt"
    f.write_text("hello\n")
    with pytest.raises(ValueError):
        load_mlp(f)


def traffic_run(policy, horizon=0.3, failures=()):
    pattern = TrafficPattern("uniform", 64e3 * 400, seed=11)
    e = Engine(torus_config(traffic=(pattern,), horizon=horizon, failures=tuple(failures)), policy)
    e.run()
    return e


def test_zero_online_rate_keeps_agents_identical():
    net = MLP((STATE_DIM, 16, N_ACTIONS), seed=1)
    before = net.flat().copy()
    pol = deploy_and_online_update(net, online_lr=0.0, cadence=1, batch=4)
    traffic_run(pol)
    assert pol.updates > 0 and pol.agents
    for agent in pol.agents.values():
        assert np.array_equal(agent.flat(), before)


def test_frozen_flag_disables_learning():
    net = MLP((STATE_DIM, 16, N_ACTIONS), seed=1)
    pol = deploy_and_online_update(net, enabled=False)
    traffic_run(pol)
    assert pol.updates == 0 and not pol.agents


def test_agents_on_disjoint_data_diverge():
    net = MLP((STATE_DIM, 16, N_ACTIONS), seed=1)
    pol = deploy_and_online_update(net, online_lr=1e-2, cadence=1, batch=4)
    rng = np.random.default_rng(0)
    for sat, r in ((0, 1.0), (1, -1.0)):
        for _ in range(8):
            pol.observe(sat, rng.standard_normal(STATE_DIM), int(rng.integers(4)), r, np.zeros(STATE_DIM),
                        np.zeros(4, bool), True)
    assert np.linalg.norm(pol.agents[0].flat() - pol.agents[1].flat()) > 0
    assert np.array_equal(pol.global_net.flat(), net.flat())


@pytest.mark.slow
def test_online_updates_do_not_hurt_after_failure(torus_model):
    fail = [FailureEvent(("sat", 5), 0.1, 10.0, "hardware"), FailureEvent(("sat", 10), 0.1, 10.0, "hardware")]

    def post_failure_delivery(online):
        pol = deploy_and_online_update(torus_model.model.copy(), online_lr=1e-4, cadence=2, enabled=online,
                                       gamma=0.8)
        e = traffic_run(pol, horizon=0.5, failures=fail)
        after = [r for r in e.ledger.latency if r.created >= 0.1]
        dropped = [d for d in e.ledger.drops if d[1] >= 0.1]
        return len(after) / max(1, len(after) + len(dropped))

    assert post_failure_delivery(True) >= post_failure_delivery(False)
