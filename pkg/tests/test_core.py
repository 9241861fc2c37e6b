import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jmsl.core import (
    Dataset,
    SubjectRecord,
    assign_folds,
    interval_outcome,
    risk_set,
)
from jmsl.errors import PreconditionError, SpecError, StratificationError


def rec(i, T, d, w=()):
    return SubjectRecord(i, np.array(w, dtype=float), [0.0], [1.0], T, d)


def make(times, events):
    return Dataset(tuple(rec(i, T, d) for i, (T, d) in enumerate(zip(times, events))))


def test_record_invariants():
    with pytest.raises(SpecError):
        SubjectRecord(1, [], [0.0, 0.0], [1.0, 2.0], 3.0, 1)
    with pytest.raises(SpecError):
        SubjectRecord(1, [], [0.0], [1.0, 2.0], 3.0, 1)
    with pytest.raises(SpecError):
        SubjectRecord(1, [], [0.0], [1.0], 0.0, 1)
    with pytest.raises(SpecError):
        SubjectRecord(1, [], [0.0], [1.0], 1.0, 2)


def test_dataset_rejects_duplicate_ids():
    with pytest.raises(SpecError):
        Dataset((rec(1, 2.0, 1), rec(1, 3.0, 0)))


def test_folds_six_subjects():
    data = make([1, 2, 3, 4, 5, 6], [1, 1, 1, 0, 0, 0])
    folds = assign_folds(data, 3, seed=7)
    for v in (1, 2, 3):
        members = folds.members(v)
        assert len(members) == 2
        assert sorted(data[i].event for i in members) == [0, 1]
    assert assign_folds(data, 3, seed=7) == folds


def test_folds_hundred_subjects():
    rng = np.random.default_rng(3)
    events = np.r_[np.ones(40), np.zeros(60)].astype(int)
    data = make(rng.uniform(1, 10, 100), rng.permutation(events))
    folds = assign_folds(data, 5, seed=11)
    for v in range(1, 6):
        assert sum(data[i].event for i in folds.members(v)) == 8


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000), st.integers(12, 60))
def test_folds_partition(V, seed, n):
    rng = np.random.default_rng(seed)
    events = np.r_[np.ones(V), np.zeros(V), rng.integers(0, 2, n)].astype(int)
    data = make(rng.uniform(1, 10, events.size), events)
    folds = assign_folds(data, V, seed)
    assert set(folds.fold_of) == set(data.ids)
    sizes = [len(folds.members(v)) for v in range(1, V + 1)]
    ev = [sum(data[i].event for i in folds.members(v)) for v in range(1, V + 1)]
    assert min(sizes) >= 1 and max(sizes) - min(sizes) <= 1
    assert max(ev) - min(ev) <= 1


def test_folds_need_events():
    with pytest.raises(StratificationError):
        assign_folds(make([1, 2, 3, 4], [1, 0, 0, 0]), 2, 0)
    with pytest.raises(StratificationError):
        assign_folds(make([1, 2, 3, 4], [1, 1, 0, 0]), 1, 0)


def test_risk_set_examples():
    data = make([1.0, 2.5, 3.0, 4.1, 7.2], [1, 0, 1, 0, 1])
    assert set(risk_set(data, 0).member_ids) == set(data.ids)
    assert risk_set(data, 7.2).member_ids == ()
    assert set(risk_set(data, 2.5).member_ids) == {2, 3, 4}


@given(st.lists(st.floats(0.01, 50), min_size=1, max_size=30), st.floats(0, 40), st.floats(0, 40))
def test_risk_set_monotone(times, a, b):
    data = make(times, [1] * len(times))
    lo, hi = sorted((a, b))
    assert len(risk_set(data, hi).member_ids) <= len(risk_set(data, lo).member_ids)


def test_interval_outcome_examples():
    assert interval_outcome(rec(0, 9.0, 1), 4, 3) == (7, 0)
    assert interval_outcome(rec(0, 5.0, 1), 4, 3) == (5, 1)
    assert interval_outcome(rec(0, 6.0, 0), 4, 3) == (6, 0)
    with pytest.raises(PreconditionError):
        interval_outcome(rec(0, 3.0, 1), 4, 3)


@given(st.floats(0.01, 30), st.integers(0, 1), st.floats(0, 20), st.floats(0.01, 10))
def test_interval_outcome_property(T, d, t, dt):
    if not T > t:
        return
    Tt, dd = interval_outcome(rec(0, T, d), t, dt)
    if dd == 1:
        assert t < Tt <= t + dt and d == 1
    assert Tt == min(T, t + dt)
