"""scikit-learn style wrapper around the Double-Q training loop."""

import numpy as np
from sklearn.base import BaseEstimator

from ..config import EnvConfig
from ..env import FuzzEnv, ObservationEncoder
from .checkpoint import load_checkpoint, save_checkpoint
from .dqn import AgentConfig, DoubleQLearner, agent_loop


class MutatorScheduler(BaseEstimator):
    """Learns which mutation operator to apply from the current test input.

    ``fit`` trains against a named target (the ``X`` argument is unused);
    ``decision_function`` scores a batch of raw inputs as one-step sequences
    from a zero recurrent state and ``predict`` takes the greedy operator.
    """

    def __init__(self, target="insert_staircase", episodes=3, budget_execs=200_000,
                 ring_k=32, snapshot_s=256, max_len=4096, gamma=0.99, batch_size=32,
                 tau=1000, lr=1e-3, reward_clip=None, random_state=0):
        self.target = target
        self.episodes = episodes
        self.budget_execs = budget_execs
        self.ring_k = ring_k
        self.snapshot_s = snapshot_s
        self.max_len = max_len
        self.gamma = gamma
        self.batch_size = batch_size
        self.tau = tau
        self.lr = lr
        self.reward_clip = reward_clip
        self.random_state = random_state

    def _env_config(self):
        return EnvConfig(target=self.target, budget_execs=self.budget_execs,
                         ring_k=self.ring_k, snapshot_s=self.snapshot_s,
                         max_len=self.max_len, seed=self.random_state).validate()

    def fit(self, X=None, y=None):
        env = FuzzEnv(self._env_config())
        cfg = AgentConfig(gamma=self.gamma, batch_size=self.batch_size, tau=self.tau,
                          lr=self.lr, reward_clip=self.reward_clip, seed=self.random_state)
        learner = DoubleQLearner(env.observation_bits, cfg)
        try:
            self.checkpoints_ = agent_loop(env, learner, self.episodes)
        finally:
            env.close()
        self.net_ = learner.net
        self.training_log_ = learner.log
        self.n_features_in_ = env.observation_bits
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise ValueError("MutatorScheduler is not fitted yet; call fit() or load()")

    def decision_function(self, X):
        """Q-values, shape ``(n_inputs, n_actions)``.

        ``X`` is a list of raw inputs or an already encoded bit matrix.
        """
        self._check_fitted()
        if isinstance(X, np.ndarray) and X.ndim == 2:
            if X.shape[1] != self.n_features_in_:
                raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
            bits = X
        else:
            bits = ObservationEncoder(self.max_len).fit().transform(X)
        Q, _ = self.net_.forward(bits[None])
        return np.asarray(Q[0], dtype=np.float64)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def save(self, path):
        self._check_fitted()
        save_checkpoint(self.net_, path)

    def load(self, path):
        self.net_ = load_checkpoint(path)
        self.n_features_in_ = self.net_.n_in
        return self
