import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import expit
from sklearn.base import clone

from qfuzz.agent import (
    AgentConfig, DoubleQLearner, MutatorScheduler, PrioritizedReplay, QNetwork, SumTree,
    TargetNetworkPair, agent_loop, double_q_target, double_q_targets, gradient_check,
    load_checkpoint, save_checkpoint, select_action,
)
from qfuzz.agent.checkpoint import CheckpointError, dump_bytes, load_bytes
from qfuzz.agent.dqn import linear_schedule
from qfuzz.config import EnvConfig
from qfuzz.env import FuzzEnv, ObservationEncoder, encode_batch, encode_observation
from qfuzz.targets import get_target


def reference_forward(net, X, h0, c0):
    """Plain per-sample, per-unit loop over the documented LSTM equations."""
    p = {k: v.astype(np.float64) for k, v in net.params.items()}
    T, B, width = X.shape
    H = net.hidden
    out = np.zeros((T, B, net.n_actions))
    for b in range(B):
        h, c = h0[b].astype(np.float64), c0[b].astype(np.float64)
        for t in range(T):
            e = p["b_embed"].copy()
            for j in range(width):
                if X[t, b, j]:
                    e += p["W_embed"][j]
            z = e @ p["W_x"] + h @ p["W_h"] + p["b_lstm"]
            i, f = expit(z[:H]), expit(z[H:2 * H])
            g, o = np.tanh(z[2 * H:3 * H]), expit(z[3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            out[t, b] = h @ p["W_q"] + p["b_q"]
    return out


def _bits(rng, T, B, width):
    return (rng.random((T, B, width)) < 0.5).astype(np.uint8)


def _const_net(q):
    net = QNetwork(8, len(q), embed=2, recurrent=False).zero_params()
    net.params["b_q"][...] = q
    return net


# --- network ----------------------------------------------------------------

def test_output_has_thirteen_values():
    net = QNetwork(64)
    Q, (h, c) = net.forward(encode_batch([b"abc"])[None])
    assert Q.shape == (1, 1, 13) and h.shape == (1, 64)


def test_zero_params_give_zero_q():
    net = QNetwork(32, embed=8, hidden=8).zero_params()
    Q, _ = net.forward(np.ones((2, 3, 32), dtype=np.uint8))
    assert not Q.any()


def test_forward_matches_reference():
    rng = np.random.default_rng(0)
    net = QNetwork(40, embed=12, hidden=10, seed=3)
    X = _bits(rng, 4, 3, 40)
    h0, c0 = rng.normal(size=(3, 10)), rng.normal(size=(3, 10))
    Q, _ = net.forward(X, (h0, c0))
    ref = reference_forward(net, X, h0, c0)
    assert np.allclose(Q, ref, rtol=1e-6, atol=1e-12)
    Q2, _ = net.forward(X, (h0, c0))
    assert np.array_equal(Q, Q2)


def test_narrow_inputs_equal_zero_padding():
    rng = np.random.default_rng(1)
    net = QNetwork(64, embed=8, hidden=8)
    X = _bits(rng, 2, 2, 24)
    padded = np.concatenate([X, np.zeros((2, 2, 40), np.uint8)], axis=-1)
    assert np.allclose(net.forward(X)[0], net.forward(padded)[0])


def test_dimension_mismatch_rejected():
    net = QNetwork(16, embed=4, hidden=4)
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 1, 17)))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 2, 16)), net.initial_state(1))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 16)))


def test_recurrent_state_isolation():
    rng = np.random.default_rng(2)
    net = QNetwork(16, embed=6, hidden=6)
    A, B = _bits(rng, 5, 1, 16), _bits(rng, 5, 1, 16)
    back_to_back = [net.forward(A)[0], net.forward(B)[0]]
    sa, sb = net.initial_state(1), net.initial_state(1)
    qa, qb = [], []
    for t in range(5):
        q, sa = net.forward(A[t:t + 1], sa)
        qa.append(q)
        q, sb = net.forward(B[t:t + 1], sb)
        qb.append(q)
    assert np.allclose(np.concatenate(qa), back_to_back[0])
    assert np.allclose(np.concatenate(qb), back_to_back[1])


# --- double-Q targets -------------------------------------------------------

def test_double_q_hand_example():
    pair = TargetNetworkPair(_const_net([0.2, 0.9]))
    pair.target.params["b_q"][...] = [5.0, 2.0]
    obs = encode_observation(b"s", 8)
    assert double_q_target(1.0, obs, False, pair, 0.5) == 2.0
    naive = 1.0 + 0.5 * pair.target.params["b_q"].max()
    assert naive == 3.5


def test_double_q_terminal_and_myopic():
    pair = TargetNetworkPair(_const_net([3.0, 1.0]))
    obs = encode_observation(b"s", 8)
    assert double_q_target(7.0, obs, True, pair, 0.99) == 7.0
    assert double_q_target(4.0, obs, False, pair, 0.0) == 4.0
    with pytest.raises(ValueError):
        double_q_target(1.0, obs, False, pair, 1.5)


def test_double_q_ties_pick_lowest_index():
    pair = TargetNetworkPair(_const_net([1.0, 1.0, 0.0]))
    pair.target.params["b_q"][...] = [10.0, 20.0, 30.0]
    assert double_q_target(0.0, encode_observation(b"s", 8), False, pair, 1.0) == 10.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0, 1))
def test_equal_weights_reduce_to_plain_q_learning(seed, gamma):
    rng = np.random.default_rng(seed)
    pair = TargetNetworkPair(QNetwork(16, embed=4, hidden=4, seed=seed))
    X = _bits(rng, 1, 5, 16)
    r = rng.normal(size=5)
    got = double_q_targets(r, X, np.zeros(5, bool), pair, gamma)
    plain = r + gamma * pair.target.forward(X)[0][0].max(axis=1)
    assert np.allclose(got, plain)


# --- action selection -------------------------------------------------------

def test_greedy_argmax_and_ties():
    q = np.zeros(13)
    q[12] = 1.0
    rng = np.random.default_rng(0)
    obs = encode_observation(b"x", 8)
    assert select_action(_const_net(q), obs, None, 0.0, rng)[0] == 12
    assert select_action(_const_net(np.zeros(13)), obs, None, 0.0, rng)[0] == 0


def test_epsilon_one_is_uniform():
    net = QNetwork(8, embed=2, hidden=2)
    rng = np.random.default_rng(5)
    obs = encode_observation(b"x", 1)
    counts = np.bincount([select_action(net, obs, None, 1.0, rng)[0] for _ in range(10_000)],
                         minlength=13)
    mean = 10_000 / 13
    sd = math.sqrt(10_000 * (1 / 13) * (12 / 13))
    assert np.all(np.abs(counts - mean) < 3 * sd)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 500), st.floats(0.01, 100))
def test_scaling_head_keeps_greedy_choice(seed, scale):
    net = QNetwork(16, embed=4, hidden=4, seed=seed)
    obs = encode_observation(bytes([seed % 256, 7]), 2)
    a, _ = select_action(net, obs, None, 0.0, np.random.default_rng(0))
    net.params["W_q"] *= scale
    net.params["b_q"] *= scale
    assert select_action(net, obs, None, 0.0, np.random.default_rng(0))[0] == a


def test_select_action_advances_state():
    net = QNetwork(16, embed=4, hidden=4)
    obs = encode_observation(b"ab", 2)
    _, s1 = select_action(net, obs, None, 1.0, np.random.default_rng(0))
    assert np.any(s1[0] != 0)


# --- training ---------------------------------------------------------------

def _tiny_learner(n_actions=2, **kw):
    cfg = AgentConfig(batch_size=4, dtype="float64", grad_clip=None, **kw)
    net = QNetwork(8, n_actions, embed=4, recurrent=False, seed=cfg.seed)
    return DoubleQLearner(8, cfg, n_actions=n_actions, recurrent=False, net=net)


def test_zero_case_leaves_parameters_unchanged():
    L = _tiny_learner(gamma=0.0)
    L.net.zero_params()
    L.pair.sync()
    for _ in range(4):
        L.remember(b"\x01", 1, 0.0, b"\x02", False)
    before = {k: v.copy() for k, v in L.net.params.items()}
    assert L.train_step() == 0.0
    assert all(np.array_equal(before[k], v) for k, v in L.net.params.items())


def test_train_step_needs_enough_transitions():
    L = _tiny_learner()
    L.remember(b"\x01", 0, 1.0, b"\x01", True)
    with pytest.raises(ValueError):
        L.train_step()


def test_bandit_converges_to_reward():
    L = _tiny_learner(gamma=0.0, lr=1e-2)
    for _ in range(4):
        L.remember(b"\x80", 0, 1.0, b"\x80", True)
    for _ in range(1500):
        L.train_step(beta=1.0)
    q = L.net.forward(encode_batch([b"\x80"])[None])[0][0, 0]
    assert abs(q[0] - 1.0) < 1e-2


def chain_value_iteration(gamma):
    # state 0: a0 stays (r 0), a1 moves to 1 (r 0); state 1: a0 stays (r 1), a1 back to 0
    P = {0: {0: (0, 0.0), 1: (1, 0.0)}, 1: {0: (1, 1.0), 1: (0, 0.0)}}
    Q = np.zeros((2, 2))
    for _ in range(2000):
        Q = np.array([[P[s][a][1] + gamma * Q[P[s][a][0]].max() for a in (0, 1)]
                      for s in (0, 1)])
    return P, Q


def train_chain(gamma=0.9, steps=20_000, seed=0):
    P, oracle = chain_value_iteration(gamma)
    states = [b"\x80", b"\x40"]
    L = _tiny_learner(gamma=gamma, tau=100, lr=1e-3, seed=seed)
    for s in (0, 1):
        for a in (0, 1):
            s2, r = P[s][a]
            L.remember(states[s], a, r, states[s2], False)
    for _ in range(steps):
        L.train_step(beta=1.0)
    learned = L.net.forward(encode_batch(states)[None])[0][0]
    return learned, oracle


def test_value_iteration_oracle_closed_form():
    _, Q = chain_value_iteration(0.9)
    assert Q[1, 0] == pytest.approx(1 / (1 - 0.9))
    assert Q[0, 1] == pytest.approx(0.9 * 10)


def test_chain_mdp_matches_value_iteration():
    learned, oracle = train_chain(steps=20_000)
    assert np.abs(learned - oracle).max() < 5e-2


def test_target_network_syncs_every_tau():
    L = _tiny_learner(tau=3)
    for _ in range(4):
        L.remember(b"\x01", 0, 1.0, b"\x01", True)
    stale = L.pair.target.params["b_q"].copy()
    L.train_step()
    L.train_step()
    assert np.array_equal(L.pair.target.params["b_q"], stale)
    L.train_step()
    assert np.array_equal(L.pair.target.params["b_q"], L.net.params["b_q"])


def test_linear_schedule_monotone():
    vals = [linear_schedule(1.0, 0.05, 100, t) for t in range(150)]
    assert vals[0] == 1.0 and vals[-1] == 0.05
    assert all(a >= b for a, b in zip(vals, vals[1:]))


# --- gradients --------------------------------------------------------------

def test_gradient_check_affine():
    rng = np.random.default_rng(0)
    net = QNetwork(12, 5, embed=6, recurrent=False, seed=1)
    X = _bits(rng, 1, 4, 12)
    assert gradient_check(net, X, rng.integers(5, size=(1, 4)), rng.normal(size=(1, 4))) < 1e-6


def test_gradient_check_recurrent():
    rng = np.random.default_rng(1)
    net = QNetwork(20, 13, embed=16, hidden=16, seed=2)
    X = _bits(rng, 3, 2, 20)
    state = (rng.normal(size=(2, 16)) * 0.5, rng.normal(size=(2, 16)) * 0.5)
    err = gradient_check(net, X, rng.integers(13, size=(3, 2)), rng.normal(size=(3, 2)),
                         state, max_coords=150)
    assert err < 1e-4


def test_zero_loss_gives_zero_gradient():
    from qfuzz.agent.dqn import td_loss_grads
    rng = np.random.default_rng(3)
    net = QNetwork(10, 4, embed=5, hidden=5)
    X = _bits(rng, 3, 2, 10)
    a = rng.integers(4, size=(3, 2))
    Q = net.forward(X)[0]
    y = Q[np.arange(3)[:, None], np.arange(2)[None, :], a]
    grads = td_loss_grads(net, X, a, y)
    assert all(not g.any() for g in grads.values())


# --- replay -----------------------------------------------------------------

@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=40), st.floats(0, 0.999))
def test_sum_tree_find_matches_cumsum(values, frac):
    tree = SumTree(len(values))
    tree.update(np.arange(len(values)), values)
    assert tree.total == pytest.approx(sum(values))
    mass = frac * tree.total
    expected = int(np.searchsorted(np.cumsum(values), mass, side="right"))
    got = int(tree.find(np.array([mass]))[0])
    assert got == min(expected, len(values) - 1) or abs(np.cumsum(values)[got] - mass) < 1e-9


def test_replay_sampling_matches_priorities():
    rp = PrioritizedReplay(capacity=64, alpha=0.6)
    rng = np.random.default_rng(0)
    pri = rng.uniform(0.1, 5.0, size=40)
    for p in pri:
        rp.add(b"x", 0, 0.0, b"x", False, priority=p)
    expected = pri ** 0.6 / np.sum(pri ** 0.6)
    assert np.allclose(rp.probabilities(), expected)
    idx = rp.sample_indices(100_000, rng)
    counts = np.bincount(idx, minlength=40)
    assert stats.chisquare(counts, expected * 100_000).pvalue > 0.01


def test_new_transitions_enter_at_max_priority():
    rp = PrioritizedReplay(capacity=8)
    rp.add(b"a", 0, 0.0, b"a", False, priority=3.0)
    rp.add(b"b", 0, 0.0, b"b", False)
    assert rp.tree[1] == pytest.approx(3.0 ** 0.6)
    rp.update_priorities([0], [10.0])
    rp.add(b"c", 0, 0.0, b"c", False)
    assert rp.tree[2] == pytest.approx((10.0 + rp.eps) ** 0.6)


def test_replay_capacity_and_oldest_first_eviction():
    rp = PrioritizedReplay()
    assert rp.capacity == 50_000
    for i in range(50_003):
        rp.add(i.to_bytes(4, "little"), 0, 0.0, b"", False)
    assert len(rp) == 50_000
    assert [int.from_bytes(rp.obs[i], "little") for i in range(3)] == [50_000, 50_001, 50_002]
    assert int.from_bytes(rp.obs[3], "little") == 3


def test_importance_weights_normalised():
    rp = PrioritizedReplay(capacity=16)
    for p in (1.0, 2.0, 4.0):
        rp.add(b"x", 0, 0.0, b"x", False, priority=p)
    _, w = rp.sample(50, np.random.default_rng(0), beta=1.0)
    assert w.max() == 1.0 and np.all(w > 0)


def test_replay_rejects_bad_priority():
    with pytest.raises(ValueError):
        PrioritizedReplay(capacity=4).add(b"", 0, 0.0, b"", False, priority=0.0)


# --- checkpoints ------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = QNetwork(24, embed=5, hidden=7, seed=4)
    p = tmp_path / "w.bin"
    save_checkpoint(net, p)
    back = load_checkpoint(p)
    assert back.dims() == net.dims()
    assert all(np.array_equal(net.params[k], back.params[k]) for k in net.params)
    raw = p.read_bytes()
    assert raw[:4] == b"QFZN" and int.from_bytes(raw[4:6], "little") == 1


def test_checkpoint_round_trip_affine():
    net = QNetwork(8, 3, embed=2, recurrent=False, seed=1)
    back = load_bytes(dump_bytes(net))
    assert not back.recurrent and np.array_equal(back.params["W_q"], net.params["W_q"])


def test_checkpoint_corruption_detected():
    raw = bytearray(dump_bytes(QNetwork(8, embed=2, hidden=2)))
    raw[30] ^= 1
    with pytest.raises(CheckpointError, match="checksum"):
        load_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_bytes(b"QF")


# --- agent loop -------------------------------------------------------------

def test_agent_loop_three_episodes(tmp_path):
    cfg = EnvConfig(target="insert_staircase", budget_execs=2560, snapshot_s=256, max_len=64)
    env = FuzzEnv(cfg)
    L = DoubleQLearner(env.observation_bits, AgentConfig(embed=8, hidden=8, tau=5))
    ckpts = agent_loop(env, L, episodes=3, checkpoint_dir=tmp_path,
                       log_path=tmp_path / "log.csv")
    assert len(ckpts) == 3 and all(load_checkpoint(c).n_in == 512 for c in ckpts)
    steps = 3 * 10
    assert len(L.replay) == min(steps, 50_000)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "episode,step,epsilon,loss,cov" and len(lines) == steps + 1
    eps = [float(x.split(",")[2]) for x in lines[1:]]
    assert eps[0] == 1.0 and all(a >= b for a, b in zip(eps, eps[1:]))


def test_agent_loop_small_replay_capacity():
    cfg = EnvConfig(target="magic_header", budget_execs=2560, max_len=32)
    env = FuzzEnv(cfg)
    L = DoubleQLearner(env.observation_bits,
                       AgentConfig(embed=4, hidden=4, replay_capacity=16, batch_size=8))
    blobs = agent_loop(env, L, episodes=2)
    assert len(blobs) == 2 and isinstance(blobs[0], bytes)
    assert len(L.replay) == 16


def test_scheduler_estimator(tmp_path):
    est = MutatorScheduler(target="insert_staircase", episodes=1, budget_execs=2048,
                           max_len=32, random_state=1)
    assert clone(est).get_params()["budget_execs"] == 2048
    with pytest.raises(ValueError, match="not fitted"):
        est.predict([b"a"])
    est.fit()
    assert len(est.checkpoints_) == 1
    q = est.decision_function([b"abc", b""])
    assert q.shape == (2, 13)
    pred = est.predict([b"abc", b""])
    assert np.array_equal(pred, q.argmax(axis=1))
    est.save(tmp_path / "s.bin")
    other = MutatorScheduler(max_len=32).load(tmp_path / "s.bin")
    assert np.allclose(other.decision_function([b"abc"]), q[:1], atol=1e-5)
    X = ObservationEncoder(max_len=est.max_len).fit().transform([b"abc", b""])
    assert np.array_equal(est.predict(X), pred)
    with pytest.raises(ValueError):
        est.predict(X[:, :8])


def test_learner_on_real_target_reduces_loss():
    env = FuzzEnv(EnvConfig(target="insert_staircase", budget_execs=12_800, max_len=256))
    L = DoubleQLearner(env.observation_bits, AgentConfig(embed=16, hidden=16, seed=0))
    agent_loop(env, L, episodes=1)
    losses = [row[3] for row in L.log if not math.isnan(row[3])]
    assert losses and all(np.isfinite(losses))
    assert get_target("insert_staircase").total_edges == 4097
