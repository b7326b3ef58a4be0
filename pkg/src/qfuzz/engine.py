"""The coverage-guided fuzzing loop.

The engine owns the corpus, coverage map, dictionaries and target
execution.  It takes its mutation operator from an :class:`ActionRing`
that an agent may rewrite at any time, and periodically publishes a
:class:`StateSnapshot` for the agent to observe.  Nothing on the engine
side ever waits for the agent.
"""

import csv
import hashlib
import json
import logging
import os
import threading
import time
from array import array
from collections import namedtuple
from dataclasses import dataclass, field

from .config import EnvConfig
from .coverage import CoverageMap
from .mutators import (
    DICTIONARY_ACTIONS, N_ACTIONS, DictionaryState, MutatorAction, apply_mutation,
    record_coverage_credit, spliced_word,
)
from .rng import RngStream, derive_seed

logger = logging.getLogger(__name__)

_CROSSOVER = int(MutatorAction.CrossOver)
_CREDIT_WORD_ACTIONS = frozenset(int(a) for a in DICTIONARY_ACTIONS)

StateSnapshot = namedtuple("StateSnapshot", "input_bytes cov step wallclock_ns seq final")
StepOutcome = namedtuple("StepOutcome", "action new_edges cov")


class ActionRing:
    """Fixed-capacity circular buffer of actions shared by one writer and one reader.

    Each slot holds a small int, and a single list-slot store is atomic, so a
    reader sees either the old or the new action.  Neither side ever blocks.
    """

    def __init__(self, capacity, actions=None):
        if capacity <= 0:
            raise ValueError("ring capacity must be positive")
        self.capacity = capacity
        if actions is None:
            actions = [0] * capacity
        if len(actions) != capacity:
            raise ValueError("initial actions must fill the ring exactly")
        self.slots = [int(a) for a in actions]
        self.write_cursor = 0
        self.read_cursor = 0

    def read(self):
        i = self.read_cursor
        a = self.slots[i]
        self.read_cursor = (i + 1) % self.capacity
        return a

    def write(self, action):
        """Overwrite the oldest slot."""
        i = self.write_cursor
        self.slots[i] = int(action)
        self.write_cursor = (i + 1) % self.capacity

    def __len__(self):
        return self.capacity

    def __repr__(self):
        return f"ActionRing({self.slots!r})"


def ring_write(ring, action):
    ring.write(action)
    return ring


class Corpus:
    """Inputs that increased coverage, in discovery order, with their metadata."""

    def __init__(self):
        self.entries = []
        self.discovery_step = []
        self.credited_action = []
        self.cov_at_discovery = []

    def add(self, data, step, action, cov):
        self.entries.append(data)
        self.discovery_step.append(step)
        self.credited_action.append(action)
        self.cov_at_discovery.append(cov)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    def digest(self):
        h = hashlib.sha256()
        for e in self.entries:
            h.update(len(e).to_bytes(4, "little"))
            h.update(e)
        return h.hexdigest()

    def write_dir(self, path):
        os.makedirs(path, exist_ok=True)
        for i, e in enumerate(self.entries):
            name = f"{i:06d}-{hashlib.sha1(e).hexdigest()[:10]}"
            with open(os.path.join(path, name), "wb") as fh:
                fh.write(e)


class ActionLog:
    """Per-execution action record, stored as ``(step, action)`` pairs at changes only.

    On disk: little-endian ``uint64 step`` followed by one ``uint8 action``,
    repeated, no header.  The action at step ``i`` is the one from the last
    pair with ``step <= i``.
    """

    RECORD = 9

    def __init__(self):
        self.steps = array("Q")
        self.actions = array("B")

    def append(self, step, action):
        if not self.actions or self.actions[-1] != action:
            self.steps.append(step)
            self.actions.append(action)

    def __len__(self):
        return len(self.steps)

    def expand(self, n):
        """Per-step actions for steps ``0..n-1``."""
        out = bytearray(n)
        bounds = list(self.steps[1:]) + [n]
        for start, stop, a in zip(self.steps, bounds, self.actions):
            out[start:min(stop, n)] = bytes((a,)) * (min(stop, n) - start)
        return bytes(out)

    def to_bytes(self):
        buf = bytearray()
        for s, a in zip(self.steps, self.actions):
            buf += s.to_bytes(8, "little")
            buf.append(a)
        return bytes(buf)

    @classmethod
    def from_bytes(cls, raw):
        if len(raw) % cls.RECORD:
            raise ValueError("truncated action log")
        log = cls()
        for off in range(0, len(raw), cls.RECORD):
            log.steps.append(int.from_bytes(raw[off:off + 8], "little"))
            log.actions.append(raw[off + 8])
        return log

    def write(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class RunReport:
    target: str
    seed: int
    config_hash: str
    final_cov: int
    executions: int
    selections: list
    credits: list
    crashes: int
    corpus_size: int
    corpus_digest: str
    series: list = field(default_factory=list)  # (step, wallclock_ns, cov, action, new_edges)
    wall_secs: float = 0.0

    SERIES_COLUMNS = ("step", "wallclock_ns", "cov", "action", "new_edges")

    def summary(self):
        """Deterministic JSON-able summary (no wall-clock fields)."""
        return {
            "target": self.target,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "final_cov": self.final_cov,
            "executions": self.executions,
            "crashes": self.crashes,
            "corpus_size": self.corpus_size,
            "corpus_digest": self.corpus_digest,
            "selections": {MutatorAction(i).name: n for i, n in enumerate(self.selections)},
            "credits": {MutatorAction(i).name: n for i, n in enumerate(self.credits)},
        }

    def cov_series(self):
        """``(step, cov)`` pairs, wall-clock stripped."""
        return [(s, c) for s, _, c, _, _ in self.series]

    def cov_at(self, steps):
        """Coverage after each of ``steps`` executions (step-function lookup)."""
        out = []
        i, cov, series = 0, 0, self.series
        for s in steps:
            while i < len(series) and series[i][0] <= s:
                cov = series[i][2]
                i += 1
            out.append(cov)
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.SERIES_COLUMNS)
            w.writerows(self.series)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class Engine:
    """One fuzzing run: corpus, coverage, dictionaries, action ring and snapshots.

    ``action_source`` picks where each execution's operator comes from:
    ``"ring"`` (agent-controlled), ``"random"`` (hard-wired uniform policy) or
    ``"script"`` (per-step actions from ``script``, used for replay).
    """

    def __init__(self, target, config=None, seed=None, *, action_source="ring",
                 script=None, persist_words=(), crash_dir=None, record_log=True):
        self.config = (config or EnvConfig()).validate()
        self.seed = self.config.seed if seed is None else seed
        self.target = target
        if action_source not in ("ring", "random", "script"):
            raise ValueError(f"unknown action source {action_source!r}")
        if action_source == "script" and script is None:
            raise ValueError("script action source needs a script")
        self.action_source = action_source
        self.script = script
        self.crash_dir = crash_dir
        self.record_log = record_log
        self.config_hash = self.config.config_hash()
        self.dicts = DictionaryState()
        for w in persist_words:
            record_coverage_credit(w, self.dicts)
        self.reset()

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed=None):
        """Start a fresh episode: one-entry corpus, empty coverage, refilled ring."""
        if seed is not None:
            self.seed = seed
        cfg = self.config
        self.rng = RngStream(derive_seed(self.seed, "engine"))
        self.policy_rng = RngStream(derive_seed(self.seed, "policy"))
        self.corpus = Corpus()
        self.corpus.add(bytes(self.target.seed_input)[:cfg.max_len], 0, -1, 0)
        self.coverage = CoverageMap()
        self.dicts.reset_episode()
        self.ring = ActionRing(cfg.ring_k,
                               [self.policy_rng.below(N_ACTIONS) for _ in range(cfg.ring_k)])
        self.step = 0
        self.selections = [0] * N_ACTIONS
        self.credits = [0] * N_ACTIONS
        self.crashes = 0
        self.series = []
        self.action_log = ActionLog()
        self.last_input = self.corpus[0]
        self._t0 = None
        self._elapsed_ns = 0
        self._seq = 0
        self._stop = False
        self.finished = False
        self.snapshot = StateSnapshot(self.last_input, 0, 0, 0, 0, False)
        return self

    @property
    def budget_execs(self):
        return self.config.budget_execs

    def out_of_budget(self):
        cfg = self.config
        if cfg.budget_execs is not None and self.step >= cfg.budget_execs:
            return True
        if cfg.budget_secs is not None and self._t0 is not None:
            return time.perf_counter_ns() - self._t0 >= cfg.budget_secs * 1e9
        return False

    # -- the loop ----------------------------------------------------------

    def _next_action(self):
        src = self.action_source
        if src == "ring":
            return self.ring.read()
        if src == "random":
            return self.policy_rng.below(N_ACTIONS)
        return self.script[self.step]

    def fuzz_once(self):
        """Select a seed, mutate it with the next ring action, execute, absorb."""
        if self._t0 is None:
            self._t0 = time.perf_counter_ns()
        rng = self.rng
        corpus = self.corpus
        entries = corpus.entries
        parent = entries[rng.below(len(entries))]
        action = self._next_action()
        other = entries[rng.below(len(entries))] if action == _CROSSOVER else None
        mut = apply_mutation(action, parent, other, self.dicts, rng, self.config.max_len)
        data = mut.data
        fb = self.target.execute(data)
        if fb.torc_events:
            record = self.dicts.record_compare
            for a, b in fb.torc_events:
                record(a, b)
        new_edges = self.coverage.absorb(fb)
        step = self.step
        if self.record_log:
            self.action_log.append(step, action)
        self.selections[action] += 1
        self.last_input = data
        if fb.verdict == "crash":
            self._handle_crash(data)
        self.step = step + 1
        if new_edges:
            cov = self.coverage.count
            corpus.add(data, self.step, action, cov)
            self.credits[action] += 1
            if action in _CREDIT_WORD_ACTIONS and mut.word is not None:
                record_coverage_credit(mut.word, self.dicts)
            elif action == _CROSSOVER and mut.applied == _CROSSOVER:
                record_coverage_credit(spliced_word(other, data, self.dicts.max_word_len),
                                       self.dicts)
            self.series.append((self.step, time.perf_counter_ns() - self._t0, cov,
                                action, new_edges))
        if self.step % self.config.snapshot_s == 0:
            self.publish()
        return StepOutcome(action, new_edges, self.coverage.count)

    def _handle_crash(self, data):
        self.crashes += 1
        logger.info("crash at step %d (seed %d)", self.step, self.seed)
        if self.crash_dir:
            os.makedirs(self.crash_dir, exist_ok=True)
            name = f"crash-{self.seed}-{self.step:09d}-{hashlib.sha1(data).hexdigest()[:10]}"
            with open(os.path.join(self.crash_dir, name), "wb") as fh:
                fh.write(data)

    def publish(self, final=False):
        self._seq += 1
        elapsed = time.perf_counter_ns() - self._t0 if self._t0 is not None else 0
        # single attribute store: readers see a whole snapshot, possibly stale
        self.snapshot = StateSnapshot(self.last_input, self.coverage.count, self.step,
                                      elapsed, self._seq, final)

    def advance(self, n=None):
        """Run until the next snapshot boundary (or ``n`` executions), then publish.

        Used by the deterministic single-threaded schedule.  Returns the
        number of executions performed.
        """
        if n is None:
            n = self.config.snapshot_s
        done = 0
        seq = self._seq
        while done < n and not self.out_of_budget():
            self.fuzz_once()
            done += 1
            if self._seq != seq:
                break
        if self.out_of_budget():
            self._finish()
        elif self._seq == seq:
            self.publish()
        return done

    def run(self, budget_execs=None, budget_secs=None):
        """Fuzz until the budget is exhausted (or :meth:`stop` is called)."""
        if budget_execs is not None or budget_secs is not None:
            self.config = self.config.replace(budget_execs=budget_execs,
                                              budget_secs=budget_secs).validate()
        if self._t0 is None:
            self._t0 = time.perf_counter_ns()
        fuzz_once = self.fuzz_once
        out_of_budget = self.out_of_budget
        cap = self.config.budget_execs
        while not self._stop and not out_of_budget():
            n = 64 if cap is None else min(64, cap - self.step)
            for _ in range(n):
                fuzz_once()
        self._finish()
        return self.report()

    def _finish(self):
        if not self.finished:
            if self._t0 is not None:
                self._elapsed_ns = time.perf_counter_ns() - self._t0
            self.finished = True
            self.publish(final=True)

    def stop(self):
        self._stop = True

    def start_thread(self):
        """Run the loop on a background thread (asynchronous mode)."""
        t = threading.Thread(target=self.run, name="fuzz-engine", daemon=True)
        self._thread = t
        t.start()
        return t

    def join(self, timeout=None):
        t = getattr(self, "_thread", None)
        if t is not None:
            t.join(timeout)

    @property
    def execs_per_sec(self):
        ns = self._elapsed_ns or (time.perf_counter_ns() - self._t0 if self._t0 else 0)
        return self.step / (ns / 1e9) if ns else 0.0

    def report(self):
        return RunReport(
            target=self.target.name,
            seed=self.seed,
            config_hash=self.config_hash,
            final_cov=self.coverage.count,
            executions=self.step,
            selections=list(self.selections),
            credits=list(self.credits),
            crashes=self.crashes,
            corpus_size=len(self.corpus),
            corpus_digest=self.corpus.digest(),
            series=list(self.series),
            wall_secs=(self._elapsed_ns or 0) / 1e9,
        )


def init_run(target, config=None, seed=None, **kwargs):
    return Engine(target, config, seed, **kwargs)


def fuzz_once(engine):
    return engine.fuzz_once()


def run(engine, budget_execs=None, budget_secs=None):
    return engine.run(budget_execs, budget_secs)
