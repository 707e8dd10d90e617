import numpy as np
import pytest
from hypothesis import given, strategies as st

from burnin_brar.state_space import (
    StageLayout, TrialState, cube_mask, enumerate_states, n_states, predecessors, stage_coordinates,
)


@pytest.mark.parametrize("i, count", [(0, 1), (1, 4), (2, 10), (6, 84), (60, 39711)])
def test_state_counts(i, count):
    assert n_states(i) == count
    assert StageLayout.for_stage(i).total == count


def test_stage_one_in_canonical_order():
    assert list(enumerate_states(1)) == [
        (0, 0, 1, 0), (0, 0, 1, 1), (1, 0, 0, 0), (1, 1, 0, 0),
    ]


def test_enumeration_rejects_out_of_range():
    with pytest.raises(ValueError):
        list(enumerate_states(-1))
    with pytest.raises(ValueError):
        list(enumerate_states(5, max_stage=4))


@pytest.mark.parametrize("i", [0, 3, 7])
def test_cube_and_compact_orders_agree(i):
    states = list(enumerate_states(i))
    coords = np.column_stack(stage_coordinates(i))
    assert [tuple(r) for r in coords] == [tuple(s) for s in states]
    assert cube_mask(i).sum() == len(states)


@given(st.integers(0, 40).flatmap(lambda i: st.tuples(st.just(i), st.integers(0, n_states(i) - 1))))
def test_index_roundtrip(args):
    i, k = args
    lay = StageLayout.for_stage(i)
    s = lay.state_of_index(k)
    assert s.stage == i and s.is_valid()
    assert lay.index(s) == k


@given(st.integers(0, 30).flatmap(lambda i: st.integers(0, n_states(i) - 1).map(
    lambda k: StageLayout.for_stage(i).state_of_index(k))))
def test_predecessors_are_one_step_back(s):
    for p in predecessors(s):
        assert p.stage == s.stage - 1 and p.is_valid()
        diff = np.subtract(s, p)
        assert diff.sum() in (1, 2) and diff.min() >= 0


def test_predecessor_order():
    s = TrialState(1, 1, 1, 0)
    assert predecessors(s) == [TrialState(0, 0, 1, 0), TrialState(1, 1, 0, 0)]


def test_layout_rejects_foreign_state():
    lay = StageLayout.for_stage(3)
    with pytest.raises(ValueError):
        lay.index(TrialState(1, 0, 1, 0))
    with pytest.raises(IndexError):
        lay.state_of_index(lay.total)


def test_cube_conversion_roundtrip():
    lay = StageLayout.for_stage(5)
    v = np.arange(lay.total, dtype=float)
    assert np.array_equal(lay.to_compact(lay.to_cube(v)), v)


def test_byte_budget_cache_evicts_oldest():
    from burnin_brar.state_space import _byte_budget_cache

    calls = []

    @_byte_budget_cache(3 * 8 * 10)
    def arr(i):
        calls.append(i)
        return np.zeros(10)

    first = arr(0)
    arr(1), arr(2)
    assert arr(0) is first and calls == [0, 1, 2]
    arr(3)  # evicts 1, the least recently used
    arr(1)
    assert calls == [0, 1, 2, 3, 1]


def test_stage_coordinates_cache_bounded():
    stages = range(200, 241, 2)
    big = [stage_coordinates(i) for i in stages]
    assert stage_coordinates(stages[-1]) is big[-1]
    assert stage_coordinates(stages[0]) is not big[0]
