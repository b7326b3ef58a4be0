"""Repeated-trial experiments comparing mutator-selection policies.

Every policy gets the same per-run execution budget and the same run seeds
(``base_seed + run``), so differences come from the policy alone.

Policy specs:

``random``
    hard-wired uniform operator choice inside the engine (no agent).
``trained:PATH``
    a checkpointed Q-network acting greedily (``eval_epsilon``) every
    ``snapshot_s`` executions.
``scripted:A,B,...``
    a fixed cycle of operator names or indices written into the ring.
"""

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .config import EnvConfig
from .engine import Engine
from .env import FuzzEnv
from .mutators import N_ACTIONS, MutatorAction
from .targets import get_target


@dataclass
class ExperimentPlan:
    target: str = "magic_header"
    policies: tuple = ("random",)
    repeats: int = 25
    budget_execs: int = 200_000
    base_seed: int = 0
    ring_k: int = 32
    snapshot_s: int = 256
    max_len: int = 4096
    eval_epsilon: float = 0.0
    thresholds: tuple = ()
    series_points: int = 100
    workers: int = 1

    def validate(self):
        if self.repeats <= 0:
            raise ValueError("repeats must be positive")
        if not self.policies:
            raise ValueError("at least one policy is required")
        for p in self.policies:
            parse_policy(p)
        self.env_config().validate()
        return self

    def env_config(self, seed=0):
        return EnvConfig(target=self.target, budget_execs=self.budget_execs,
                         ring_k=self.ring_k, snapshot_s=self.snapshot_s,
                         max_len=self.max_len, seed=seed)

    def seeds(self):
        return [self.base_seed + i for i in range(self.repeats)]


def parse_policy(spec):
    kind, _, arg = spec.partition(":")
    if kind == "random" and not arg:
        return kind, None
    if kind == "trained" and arg:
        return kind, arg
    if kind == "scripted" and arg:
        actions = []
        for tok in arg.split(","):
            tok = tok.strip()
            actions.append(MutatorAction(int(tok)) if tok.isdigit() else MutatorAction[tok])
        return kind, actions
    raise ValueError(f"bad policy spec {spec!r}; use random, trained:PATH or scripted:A,B")


@dataclass
class RunResult:
    policy: str
    run: int
    seed: int
    final_cov: int
    executions: int
    series: list  # coverage at ExperimentReport.grid steps
    selections: list
    decisions: list  # agent decisions per operator (zeros for the random policy)
    summary: dict = field(default_factory=dict)


def _load_policy_net(path):
    from .agent import load_checkpoint
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _run_one(plan, policy, run, seed, grid, net=None, target=None):
    kind, arg = parse_policy(policy)
    cfg = plan.env_config(seed)
    target = target or get_target(plan.target)
    decisions = [0] * N_ACTIONS
    if kind == "random":
        eng = Engine(target, cfg, seed, action_source="random", record_log=False)
        report = eng.run()
    else:
        env = FuzzEnv(cfg, target=target, engine_kwargs={"record_log": False})
        obs = env.reset(seed)
        done = False
        if kind == "scripted":
            i = 0
            while not done:
                a = arg[i % len(arg)]
                i += 1
                decisions[a] += 1
                obs, _, done = env.step(a)
        else:
            from .agent import select_action
            rng = np.random.default_rng(seed)
            state = net.initial_state(1)
            while not done:
                a, state = select_action(net, obs, state, plan.eval_epsilon, rng)
                decisions[a] += 1
                obs, _, done = env.step(a)
        report = env.report()
    return RunResult(policy, run, seed, report.final_cov, report.executions,
                     report.cov_at(grid), report.selections, decisions, report.summary())


class ExperimentReport:
    def __init__(self, plan, results, grid):
        self.plan = plan
        self.results = results  # {policy: [RunResult, ...]} in run order
        self.grid = grid

    def finals(self, policy):
        return [r.final_cov for r in self.results[policy]]

    def best(self, policy):
        return max(self.finals(policy))

    def mean(self, policy):
        return float(np.mean(self.finals(policy)))

    def executions(self, policy):
        return [r.executions for r in self.results[policy]]

    def budget_fair(self):
        counts = {e for p in self.results for e in self.executions(p)}
        return len(counts) == 1

    def selection_histogram(self, policy):
        return np.sum([r.selections for r in self.results[policy]], axis=0).tolist()

    def decision_histogram(self, policy):
        return np.sum([r.decisions for r in self.results[policy]], axis=0).tolist()

    def final_histogram(self, policy, bins=10):
        """Bucketed final-coverage counts: ``(edges, counts)``."""
        counts, edges = np.histogram(self.finals(policy), bins=bins)
        return edges.tolist(), counts.tolist()

    def series_stats(self, policy):
        """Per grid step ``(mean, sd, ci_low, ci_high)`` with ci = mean +- 1.96 sd / sqrt(n)."""
        S = np.array([r.series for r in self.results[policy]], dtype=np.float64)
        n = S.shape[0]
        mean = S.mean(axis=0)
        sd = S.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
        half = 1.96 * sd / math.sqrt(n)
        return mean, sd, mean - half, mean + half

    def breakthroughs(self, policy, threshold):
        return sum(c > threshold for c in self.finals(policy))

    def summary(self):
        out = {
            "plan": asdict(self.plan),
            "budget_fair": self.budget_fair(),
            "policies": {},
        }
        for p in self.results:
            finals = self.finals(p)
            entry = {
                "final_cov": finals,
                "best": max(finals),
                "mean": float(np.mean(finals)),
                "executions": self.executions(p),
                "selections": self.selection_histogram(p),
                "decisions": self.decision_histogram(p),
                "final_histogram": self.final_histogram(p),
                "breakthroughs": {str(t): self.breakthroughs(p, t) for t in self.plan.thresholds},
            }
            out["policies"][p] = entry
        return out

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "runs.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("policy", "run", "seed", "final_cov", "executions"))
            for p, rs in self.results.items():
                for r in rs:
                    w.writerow((p, r.run, r.seed, r.final_cov, r.executions))
        emit_series(self, os.path.join(out_dir, "series.csv"))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _grid(budget, points):
    points = max(1, min(points, budget))
    return sorted({round(budget * (i + 1) / points) for i in range(points)})


def run_experiment(plan, out_dir=None):
    """Run ``repeats`` x ``policies`` and aggregate into an :class:`ExperimentReport`."""
    plan.validate()
    grid = _grid(plan.budget_execs, plan.series_points)
    target = get_target(plan.target)
    nets = {p: _load_policy_net(parse_policy(p)[1])
            for p in plan.policies if parse_policy(p)[0] == "trained"}
    jobs = [(p, i, s) for p in plan.policies for i, s in enumerate(plan.seeds())]

    def work(job):
        p, i, s = job
        return _run_one(plan, p, i, s, grid, nets.get(p), target)

    if plan.workers > 1:
        with ThreadPoolExecutor(plan.workers) as pool:
            done = list(pool.map(work, jobs))
    else:
        done = [work(j) for j in jobs]
    results = {p: [] for p in plan.policies}
    for r in done:
        results[r.policy].append(r)
    report = ExperimentReport(plan, results, grid)
    if not report.budget_fair():
        raise AssertionError("policies received unequal execution budgets")
    if out_dir is not None:
        report.write(out_dir)
    return report


def breakthrough_rate(report, threshold, policy=None):
    """Fraction of runs whose final coverage strictly exceeds ``threshold``.

    ``report`` may be an :class:`ExperimentReport` (with ``policy``) or a
    plain sequence of final coverage values.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    finals = report.finals(policy) if isinstance(report, ExperimentReport) else list(report)
    if not finals:
        raise ValueError("no runs to rate")
    return Fraction(sum(c > threshold for c in finals), len(finals))


def proportion_test(x1, n1, x2, n2):
    """One-sided pooled two-proportion z-test of ``p1 > p2``; returns the p-value."""
    p = (x1 + x2) / (n1 + n2)
    var = p * (1 - p) * (1 / n1 + 1 / n2)
    if var == 0:
        return 1.0 if x1 / n1 <= x2 / n2 else 0.0
    z = (x1 / n1 - x2 / n2) / math.sqrt(var)
    return float(stats.norm.sf(z))


def null_self_test(plan, threshold, alpha=0.05):
    """Baseline against itself on disjoint seeds; passes when no difference is detected.

    Returns ``(passed, p_two_sided)``.
    """
    a = run_experiment(_replace(plan, policies=("random",)))
    b = run_experiment(_replace(plan, policies=("random",),
                                base_seed=plan.base_seed + plan.repeats))
    xa, xb = a.breakthroughs("random", threshold), b.breakthroughs("random", threshold)
    n = plan.repeats
    p_two = min(1.0, 2 * min(proportion_test(xa, n, xb, n), proportion_test(xb, n, xa, n)))
    return p_two >= alpha, p_two


def _replace(plan, **changes):
    d = asdict(plan)
    d.update(changes)
    return ExperimentPlan(**d)


def emit_series(report, path):
    """Long-format ``policy,run,step,cov`` CSV plus ``<path>_summary.csv`` with mean and CI."""
    parent = os.path.dirname(os.path.abspath(path))
    if not os.access(parent, os.W_OK):
        raise PermissionError(f"cannot write to {parent}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("policy", "run", "step", "cov"))
        for p, rs in report.results.items():
            for r in rs:
                for step, cov in zip(report.grid, r.series):
                    w.writerow((p, r.run, step, cov))
    root, ext = os.path.splitext(path)
    summary_path = f"{root}_summary{ext or '.csv'}"
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("policy", "step", "n", "mean", "sd", "ci_low", "ci_high"))
        for p in report.results:
            mean, sd, lo, hi = report.series_stats(p)
            n = len(report.results[p])
            for k, step in enumerate(report.grid):
                w.writerow((p, step, n, f"{mean[k]:.6f}", f"{sd[k]:.6f}",
                            f"{lo[k]:.6f}", f"{hi[k]:.6f}"))
    return path, summary_path
