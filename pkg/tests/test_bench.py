import csv
import json
import math
from fractions import Fraction

import numpy as np
import pytest

from qfuzz.agent import QNetwork, save_checkpoint
from qfuzz.bench import (
    ExperimentPlan, breakthrough_rate, emit_series, null_self_test, parse_policy,
    proportion_test, run_experiment,
)
from qfuzz.mutators import MutatorAction as M


def small_plan(**kw):
    base = dict(target="magic_header", repeats=4, budget_execs=4000, max_len=64,
                series_points=20)
    base.update(kw)
    return ExperimentPlan(**base)


def test_breakthrough_examples():
    assert breakthrough_rate([1, 2, 3], 10) == 0
    assert breakthrough_rate([11, 12], 10) == 1
    assert breakthrough_rate([20] * 5 + [3] * 20, 10) == Fraction(1, 5)
    assert breakthrough_rate([10, 11], 10) == Fraction(1, 2)
    with pytest.raises(ValueError):
        breakthrough_rate([1], 0)


def test_proportion_test_against_hand_computation():
    # pooled p = 0.6, se = sqrt(0.6 * 0.4 * 2 / 25), z = 0.4 / se
    z = 0.4 / math.sqrt(0.6 * 0.4 * 2 / 25)
    expected = 0.5 * math.erfc(z / math.sqrt(2))
    assert proportion_test(20, 25, 10, 25) == pytest.approx(expected)
    assert proportion_test(10, 25, 10, 25) == pytest.approx(0.5)
    assert proportion_test(25, 25, 25, 25) == 1.0
    assert proportion_test(5, 5, 0, 5) < 0.01


def test_parse_policy():
    assert parse_policy("random") == ("random", None)
    assert parse_policy("trained:w.bin") == ("trained", "w.bin")
    assert parse_policy("scripted:InsertByte,4") == ("scripted", [M.InsertByte, M.ChangeByte])
    for bad in ("", "trained", "greedy", "scripted:Nope"):
        with pytest.raises((ValueError, KeyError)):
            parse_policy(bad)


def test_report_consistency_and_files(tmp_path):
    plan = small_plan(policies=("random", "scripted:InsertByte"), thresholds=(5,))
    rep = run_experiment(plan, tmp_path)
    for p in plan.policies:
        finals = rep.finals(p)
        assert len(finals) == 4
        assert rep.best(p) == max(finals) and rep.mean(p) == pytest.approx(np.mean(finals))
        for r in rep.results[p]:
            assert r.series == sorted(r.series)
            assert r.series[-1] == r.final_cov
        mean, sd, lo, hi = rep.series_stats(p)
        assert np.all(lo <= mean) and np.all(mean <= hi)
        assert mean[-1] == pytest.approx(rep.mean(p))
    assert rep.budget_fair()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["budget_fair"] and set(summary["policies"]) == set(plan.policies)
    rows = list(csv.DictReader(open(tmp_path / "runs.csv")))
    assert len(rows) == 8 and rows[0].keys() == {"policy", "run", "seed", "final_cov",
                                                 "executions"}
    assert {r["seed"] for r in rows} == {"0", "1", "2", "3"}
    hist = summary["policies"]["random"]["final_histogram"]
    assert sum(hist[1]) == 4


def test_ci_recomputable_from_series(tmp_path):
    rep = run_experiment(small_plan(repeats=5))
    emit_series(rep, tmp_path / "series.csv")
    long = list(csv.DictReader(open(tmp_path / "series.csv")))
    summ = list(csv.DictReader(open(tmp_path / "series_summary.csv")))
    assert len(long) == 5 * len(rep.grid) and len(summ) == len(rep.grid)
    last = [float(r["cov"]) for r in long if int(r["step"]) == rep.grid[-1]]
    m, s = np.mean(last), np.std(last, ddof=1)
    row = summ[-1]
    assert float(row["mean"]) == pytest.approx(m, abs=1e-6)
    assert float(row["ci_high"]) == pytest.approx(m + 1.96 * s / math.sqrt(5), abs=1e-6)


def test_emit_series_unwritable_path(tmp_path):
    rep = run_experiment(small_plan(repeats=2))
    with pytest.raises((PermissionError, FileNotFoundError)):
        emit_series(rep, tmp_path / "missing" / "deeper" / "s.csv")


def test_deterministic_and_parallel_equal():
    a = run_experiment(small_plan())
    b = run_experiment(small_plan(workers=3))
    assert a.summary()["policies"] == b.summary()["policies"]
    assert [r.series for r in a.results["random"]] == [r.series for r in b.results["random"]]


def test_twenty_five_rows_per_policy(tmp_path):
    net = QNetwork(8 * 64, embed=4, hidden=4)
    ckpt = tmp_path / "w.bin"
    save_checkpoint(net, ckpt)
    plan = small_plan(repeats=25, budget_execs=1024, policies=("random", f"trained:{ckpt}"))
    rep = run_experiment(plan)
    assert [len(rep.finals(p)) for p in plan.policies] == [25, 25]
    trained = rep.results[plan.policies[1]]
    assert all(sum(r.decisions) == 4 for r in trained)


def test_missing_checkpoint_and_unknown_target():
    with pytest.raises(FileNotFoundError):
        run_experiment(small_plan(policies=("trained:/nonexistent.bin",)))
    with pytest.raises(KeyError):
        run_experiment(small_plan(target="nope"))


def test_null_self_test_passes_for_baseline():
    passed, p = null_self_test(small_plan(repeats=10, budget_execs=10_000), threshold=5)
    assert passed and 0.05 <= p <= 1.0
