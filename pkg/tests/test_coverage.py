import pytest
from hypothesis import given, strategies as st

from qfuzz.coverage import (
    CoverageContractError, CoverageMap, ExecutionFeedback, absorb, reward,
)

edge_sets = st.frozensets(st.integers(0, 200), min_size=1, max_size=20)


def fb(*edges):
    return ExecutionFeedback(frozenset(edges))


def test_absorb_examples():
    m, n = absorb(CoverageMap({1, 2}), fb(2, 3))
    assert m.edges == {1, 2, 3} and n == 1
    m, n = absorb(CoverageMap(), fb(7))
    assert m.edges == {7} and n == 1
    m, n = absorb(CoverageMap({1, 2, 3}), fb(1, 3))
    assert m.edges == {1, 2, 3} and n == 0


def test_functional_absorb_leaves_input_alone():
    before = CoverageMap({1})
    absorb(before, fb(5))
    assert before.edges == {1}


@pytest.mark.parametrize("prev,now,expected", [(327, 327, 0), (320, 327, 7), (0, 1, 1)])
def test_reward_examples(prev, now, expected):
    assert reward(prev, now) == expected


def test_reward_rejects_decrease():
    with pytest.raises(CoverageContractError):
        reward(5, 4)


@given(edge_sets, edge_sets)
def test_absorb_is_union_and_idempotent(a, b):
    m = CoverageMap(set(a))
    n = m.absorb(ExecutionFeedback(b))
    assert m.edges == a | b and n == len(b - a) and m.count == len(m.edges)
    assert m.absorb(ExecutionFeedback(b)) == 0


@given(st.lists(edge_sets, max_size=30))
def test_rewards_telescope(feedbacks):
    m = CoverageMap()
    prev, total = 0, 0
    for e in feedbacks:
        m.absorb(ExecutionFeedback(e))
        total += reward(prev, m.count)
        prev = m.count
    assert total == m.count


def test_feedback_verdict():
    assert ExecutionFeedback(frozenset({0}), verdict="crash").crashed
    assert not fb(0).crashed
