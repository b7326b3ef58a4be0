"""Gym-style episodic view of a running fuzzing engine.

Observations are the most recently generated test input as a bit vector of
length ``8 * max_len`` (MSB first within each byte, zero padded).  The
reward for a step is the coverage gained since the previous step.

Two stepping modes share the same contract:

``sync``
    Deterministic: ``step`` writes the action, runs the engine up to its
    next snapshot (``snapshot_s`` executions) on the calling thread, then
    returns.
``async``
    The engine runs free on its own thread, cycling the action ring;
    ``step`` writes the action and waits for the next published snapshot.
"""

import threading
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .config import EnvConfig
from .coverage import reward as coverage_reward
from .engine import Engine
from .mutators import N_ACTIONS, MutatorAction
from .targets import get_target


@dataclass(frozen=True)
class Observation:
    data: bytes
    max_len: int
    cov: int = 0
    step: int = 0

    @property
    def length(self):
        return len(self.data)

    @property
    def bits(self):
        return encode_bits(self.data, self.max_len)

    @property
    def aux(self):
        return self.cov, self.step, self.length


def encode_bits(data, max_len):
    if len(data) > max_len:
        raise ValueError(f"input of {len(data)} bytes exceeds max_len={max_len}")
    out = np.zeros(8 * max_len, dtype=np.uint8)
    if data:
        out[:8 * len(data)] = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))
    return out


def encode_observation(data, max_len, cov=0, step=0):
    if len(data) > max_len:
        raise ValueError(f"input of {len(data)} bytes exceeds max_len={max_len}")
    return Observation(bytes(data), max_len, cov, step)


def decode_bits(bits, length):
    """Inverse of :func:`encode_bits` given the input length."""
    bits = np.asarray(bits, dtype=np.uint8)
    return np.packbits(bits[:8 * length]).tobytes()


def encode_batch(inputs, width_bytes=None):
    """Stack inputs as a ``(B, 8 * width)`` bit matrix, width = longest input.

    Columns past the longest input would be all zero, so they are omitted.
    """
    inputs = [bytes(x) for x in inputs]
    width = max((len(x) for x in inputs), default=0) if width_bytes is None else width_bytes
    width = max(width, 1)
    buf = np.zeros((len(inputs), width), dtype=np.uint8)
    for r, x in enumerate(inputs):
        buf[r, :len(x)] = np.frombuffer(x, dtype=np.uint8)
    return np.unpackbits(buf, axis=1)


class ObservationEncoder(TransformerMixin, BaseEstimator):
    """Bit-array encoder with the scikit-learn transformer interface.

    ``transform`` maps a sequence of byte strings to an ``(n, 8 * max_len)``
    ``uint8`` matrix.
    """

    def __init__(self, max_len=4096):
        self.max_len = max_len

    def fit(self, X=None, y=None):
        if not isinstance(self.max_len, (int, np.integer)) or self.max_len <= 0:
            raise ValueError(f"max_len must be a positive integer, got {self.max_len!r}")
        self.n_features_out_ = 8 * self.max_len
        return self

    def transform(self, X):
        _check_inputs(X, self.max_len)
        return encode_batch(X, self.max_len)

    def inverse_transform(self, bits, lengths):
        return [decode_bits(row, n) for row, n in zip(np.atleast_2d(bits), lengths)]

    def get_feature_names_out(self, input_features=None):
        return np.array([f"byte{j}_bit{b}" for j in range(self.max_len) for b in range(8)],
                        dtype=object)


def _check_inputs(X, max_len):
    if isinstance(X, (bytes, bytearray)):
        raise TypeError("expected a sequence of inputs, got a single bytes object")
    for i, x in enumerate(X):
        if not isinstance(x, (bytes, bytearray, memoryview)):
            raise TypeError(f"input {i} is {type(x).__name__}, expected bytes")
        if len(x) > max_len:
            raise ValueError(f"input {i} has {len(x)} bytes, max_len={max_len}")


class EpisodeFinished(RuntimeError):
    pass


class FuzzEnv:
    """One environment per engine; actions are :class:`MutatorAction` values."""

    n_actions = N_ACTIONS

    def __init__(self, config=None, target=None, mode="sync", engine_kwargs=None):
        self.config = (config or EnvConfig()).validate()
        if mode not in ("sync", "async"):
            raise ValueError(f"mode must be 'sync' or 'async', got {mode!r}")
        self.mode = mode
        self.target = target if target is not None else get_target(self.config.target)
        self.engine = Engine(self.target, self.config, **(engine_kwargs or {}))
        self.observation_bits = 8 * self.config.max_len
        self._published = threading.Event()
        self._active = False
        self._episode = 0

    @property
    def config_hash(self):
        return self.config.config_hash()

    def _observe(self, snap):
        return Observation(snap.input_bytes, self.config.max_len, snap.cov, snap.step)

    def reset(self, seed=None):
        self.close()
        if seed is None:
            seed = self.config.seed + self._episode
        self._episode += 1
        eng = self.engine.reset(seed)
        self._last_cov = 0
        self._last_seq = eng.snapshot.seq
        self.episode_reward = 0
        self._active = True
        if self.mode == "async":
            publish = eng.publish
            event = self._published

            def publish_and_signal(final=False):
                publish(final)
                event.set()

            eng.publish = publish_and_signal
            eng.start_thread()
        return self._observe(eng.snapshot)

    def step(self, action):
        if not self._active:
            raise EpisodeFinished("step() on a finished episode; call reset()")
        eng = self.engine
        eng.ring.write(MutatorAction(action))
        if self.mode == "sync":
            eng.advance()
        else:
            while True:
                self._published.clear()
                if eng.snapshot.seq != self._last_seq:
                    break
                self._published.wait(0.5)
        snap = eng.snapshot
        self._last_seq = snap.seq
        r = coverage_reward(self._last_cov, snap.cov)
        self._last_cov = snap.cov
        self.episode_reward += r
        done = snap.final
        if done:
            self._active = False
            if self.mode == "async":
                eng.join()
        return self._observe(snap), r, done

    def close(self):
        eng = self.engine
        if getattr(eng, "_thread", None) is not None and eng._thread.is_alive():
            eng.stop()
            eng.join()
        eng.__dict__.pop("publish", None)
        self._active = False

    def report(self):
        return self.engine.report()
