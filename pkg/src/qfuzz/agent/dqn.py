"""Double-Q learning with a recurrent Q-network and prioritized replay."""

import csv
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from ..env import Observation, encode_batch
from ..mutators import N_ACTIONS, MutatorAction
from .network import Adam, QNetwork
from .replay import REPLAY_CAPACITY, PrioritizedReplay

logger = logging.getLogger(__name__)


@dataclass
class AgentConfig:
    gamma: float = 0.99
    batch_size: int = 32
    tau: int = 1000
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5
    lr: float = 1e-3
    embed: int = 64
    hidden: int = 64
    replay_capacity: int = REPLAY_CAPACITY
    priority_eps: float = 1e-3
    train_every: int = 1
    reward_clip: float | None = None
    grad_clip: float | None = 10.0
    anneal_steps: int | None = None
    dtype: str = "float32"
    seed: int = 0


class TargetNetworkPair:
    """Online network plus a stale copy refreshed every ``tau`` training steps."""

    def __init__(self, online, tau=1000):
        self.online = online
        self.target = online.copy()
        self.tau = int(tau)
        self.updates = 0

    def sync(self):
        for k, v in self.online.params.items():
            self.target.params[k][...] = v

    def tick(self):
        self.updates += 1
        if self.updates % self.tau == 0:
            self.sync()


def _bits(obs):
    if isinstance(obs, Observation):
        return obs.data
    return bytes(obs)


def _batch(observations, net):
    X = encode_batch([_bits(o) for o in observations])
    return X[None, :, :net.n_in]


def double_q_targets(rewards, next_X, dones, pair, gamma, next_state=None):
    """Vectorised ``r + gamma * Q_target(s', argmax_a Q_online(s', a))``.

    The online net picks the action (lowest index on ties), the target net
    scores it; terminal transitions return ``r``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    q_online = pair.online.forward(next_X, next_state)[0][0]
    q_target = pair.target.forward(next_X, next_state)[0][0]
    best = np.argmax(q_online, axis=1)
    boot = q_target[np.arange(len(best)), best]
    return np.where(dones, rewards, rewards + gamma * boot)


def double_q_target(r, next_obs, done, pair, gamma, next_state=None):
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if done:
        return float(r)
    X = _batch([next_obs], pair.online)
    return float(double_q_targets([r], X, [False], pair, gamma, next_state)[0])


def select_action(net, obs, state, epsilon, rng):
    """Epsilon-greedy choice; always advances the recurrent state.

    Returns ``(action, next_state)``; greedy ties go to the lowest index.
    """
    if state is None:
        state = net.initial_state(1)
    q, new_state = net.forward(_batch([obs], net), state)
    if rng.random() < epsilon:
        return MutatorAction(int(rng.integers(net.n_actions))), new_state
    return MutatorAction(int(np.argmax(q[0, 0]))), new_state


def greedy_action(q):
    return int(np.argmax(q))


def linear_schedule(start, end, duration, t):
    if duration <= 0:
        return end
    frac = t / duration
    if frac >= 1.0:
        return end
    return start + max(frac, 0.0) * (end - start)


class DoubleQLearner:
    """Owns the network pair, optimiser and replay memory."""

    def __init__(self, n_in, config=None, n_actions=N_ACTIONS, recurrent=True, net=None):
        self.config = cfg = config or AgentConfig()
        self.rng = np.random.default_rng(cfg.seed)
        if net is None:
            net = QNetwork(n_in, n_actions, cfg.embed, cfg.hidden, recurrent, seed=cfg.seed,
                           dtype=cfg.dtype)
        self.pair = TargetNetworkPair(net, cfg.tau)
        self.optimizer = Adam(net.params, lr=cfg.lr)
        self.replay = PrioritizedReplay(cfg.replay_capacity, cfg.alpha, net.hidden,
                                        cfg.priority_eps)
        self.steps = 0

    @property
    def net(self):
        return self.pair.online

    def remember(self, obs, action, reward, next_obs, done, state=None, next_state=None):
        clip = self.config.reward_clip
        if clip is not None:
            reward = min(reward, clip)
        self.replay.add(_bits(obs), action, reward, _bits(next_obs), done, state, next_state)

    def _states(self, idx, which):
        net = self.net
        if not net.recurrent:
            return None
        rp = self.replay
        h, c = (rp.h, rp.c) if which == "now" else (rp.next_h, rp.next_c)
        return h[idx].astype(net.dtype), c[idx].astype(net.dtype)

    def train_step(self, beta=None, batch_size=None):
        """One prioritized minibatch update; returns the weighted squared TD loss."""
        cfg = self.config
        B = batch_size or cfg.batch_size
        rp = self.replay
        if len(rp) < B:
            raise ValueError(f"replay holds {len(rp)} transitions, batch needs {B}")
        beta = cfg.beta_start if beta is None else beta
        idx, w = rp.sample(B, self.rng, beta)
        net = self.net
        X = _batch([rp.obs[i] for i in idx], net)
        Xn = _batch([rp.next_obs[i] for i in idx], net)
        y = double_q_targets(rp.rewards[idx], Xn, rp.dones[idx], self.pair, cfg.gamma,
                             self._states(idx, "next"))
        Q, _, cache = net.forward(X, self._states(idx, "now"), keep_cache=True)
        a = rp.actions[idx]
        rows = np.arange(B)
        td = y - Q[0, rows, a]
        loss = float(np.mean(w * td * td))
        dQ = np.zeros_like(Q)
        dQ[0, rows, a] = -2.0 * w * td / B
        grads = net.backward(dQ, cache)
        if cfg.grad_clip is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > cfg.grad_clip:
                for g in grads.values():
                    g *= cfg.grad_clip / norm
        self.optimizer.step(net.params, grads)
        rp.update_priorities(idx, td)
        self.pair.tick()
        return loss


def train_step(learner, beta=None, batch_size=None):
    return learner.train_step(beta, batch_size)


def td_loss(net, X, actions, targets, state=None):
    """``0.5 * sum (Q(s_t, a_t) - y_t)**2`` over a ``(T, B)`` sequence batch."""
    Q = net.forward(X, state)[0]
    T, B = actions.shape
    q = Q[np.arange(T)[:, None], np.arange(B)[None, :], actions]
    return 0.5 * float(np.sum((q - targets) ** 2))


def td_loss_grads(net, X, actions, targets, state=None):
    Q, _, cache = net.forward(X, state, keep_cache=True)
    T, B = actions.shape
    ti, bi = np.arange(T)[:, None], np.arange(B)[None, :]
    dQ = np.zeros_like(Q)
    dQ[ti, bi, actions] = Q[ti, bi, actions] - targets
    return net.backward(dQ, cache)


def gradient_check(net, X, actions, targets, state=None, step=1e-5, floor=1e-6,
                   max_coords=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a| + |n|, floor)``.  ``max_coords``
    limits how many entries per tensor are probed.
    """
    analytic = td_loss_grads(net, X, actions, targets, state)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name in net.param_names:
        P = net.params[name]
        G = np.zeros_like(P)
        g = analytic[name]
        G[:g.shape[0]] = g
        flat = P.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, max_coords, replace=False)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + step
            up = td_loss(net, X, actions, targets, state)
            flat[k] = orig - step
            down = td_loss(net, X, actions, targets, state)
            flat[k] = orig
            num = (up - down) / (2 * step)
            a = G.reshape(-1)[k]
            worst = max(worst, abs(a - num) / max(abs(a) + abs(num), floor))
    return worst


def agent_loop(env, learner, episodes=3, checkpoint_dir=None, log_path=None,
               on_episode=None):
    """Episodic training: act, step, remember, learn.

    Writes one checkpoint per episode into ``checkpoint_dir`` (if given) and a
    training log CSV with columns ``episode, step, epsilon, loss, cov``.
    Returns the list of checkpoint paths (or serialized blobs when no
    directory is given).
    """
    from .checkpoint import dump_bytes, save_checkpoint

    cfg = learner.config
    budget = env.config.budget_execs
    if cfg.anneal_steps is not None:
        total = cfg.anneal_steps
    elif budget is not None:
        total = episodes * math.ceil(budget / env.config.snapshot_s)
    else:
        total = 10_000
    eps_steps = cfg.eps_fraction * total
    net = learner.net
    act_rng = np.random.default_rng(cfg.seed + 1)
    checkpoints = []
    log_rows = []
    t = 0
    for ep in range(episodes):
        obs = env.reset()
        state = net.initial_state(1)
        done = False
        loss = float("nan")
        while not done:
            eps = linear_schedule(cfg.eps_start, cfg.eps_end, eps_steps, t)
            action, next_state = select_action(net, obs, state, eps, act_rng)
            next_obs, r, done = env.step(action)
            learner.remember(obs, action, r, next_obs, done, state, next_state)
            t += 1
            if len(learner.replay) >= cfg.batch_size and t % cfg.train_every == 0:
                beta = linear_schedule(cfg.beta_start, cfg.beta_end, total, t)
                loss = learner.train_step(beta)
            log_rows.append((ep, t, eps, loss, next_obs.cov))
            obs, state = next_obs, next_state
        logger.info("episode %d: cov=%d steps=%d eps=%.3f", ep, obs.cov, t, eps)
        if checkpoint_dir is not None:
            os.makedirs(checkpoint_dir, exist_ok=True)
            path = os.path.join(checkpoint_dir, f"ckpt_ep{ep}.bin")
            save_checkpoint(net, path)
            checkpoints.append(path)
        else:
            checkpoints.append(dump_bytes(net))
        if on_episode is not None:
            on_episode(ep, obs)
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("episode", "step", "epsilon", "loss", "cov"))
            w.writerows(log_rows)
    learner.log = log_rows
    return checkpoints
