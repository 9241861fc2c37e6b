"""Subjects, datasets, cross-validation folds and risk sets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import PreconditionError, SpecError, StratificationError

log = logging.getLogger(__name__)

MIN_INTERVAL_EVENTS = 10


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    id: Hashable
    covariates: np.ndarray
    times: np.ndarray
    values: np.ndarray
    obs_time: float
    event: int

    def __post_init__(self):
        w = np.asarray(self.covariates, dtype=float).reshape(-1)
        t = np.asarray(self.times, dtype=float).reshape(-1)
        y = np.asarray(self.values, dtype=float).reshape(-1)
        for arr in (w, t, y):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", w)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)
        object.__setattr__(self, "obs_time", float(self.obs_time))
        object.__setattr__(self, "event", int(self.event))
        if t.size < 1 or t.size != y.size:
            raise SpecError(f"subject {self.id}: need >=1 measurement and equal-length times/values")
        if np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise SpecError(f"subject {self.id}: measurement times must be increasing and >= 0")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(w)):
            raise SpecError(f"subject {self.id}: non-finite measurement or covariate")
        if not self.obs_time > 0:
            raise SpecError(f"subject {self.id}: observed time must be positive")
        if self.event not in (0, 1):
            raise SpecError(f"subject {self.id}: event indicator must be 0 or 1")

    def __eq__(self, other):
        if not isinstance(other, SubjectRecord):
            return NotImplemented
        return (self.id == other.id and self.obs_time == other.obs_time
                and self.event == other.event
                and np.array_equal(self.covariates, other.covariates)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def history(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Measurements taken at or before ``t``."""
        keep = self.times <= t
        return self.times[keep], self.values[keep]


@dataclass(frozen=True, eq=False)
class Dataset:
    subjects: tuple[SubjectRecord, ...]
    covariate_names: tuple[str, ...] = ()
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        subjects = tuple(self.subjects)
        object.__setattr__(self, "subjects", subjects)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        index = {}
        for k, s in enumerate(subjects):
            if s.id in index:
                raise SpecError(f"duplicate subject id {s.id!r}")
            if s.covariates.size != len(self.covariate_names):
                raise SpecError(f"subject {s.id!r} has {s.covariates.size} covariates, "
                                f"expected {len(self.covariate_names)}")
            index[s.id] = k
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def __getitem__(self, subject_id) -> SubjectRecord:
        return self.subjects[self._index[subject_id]]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.covariate_names == other.covariate_names and self.subjects == other.subjects

    __hash__ = None

    @property
    def ids(self) -> list:
        return [s.id for s in self.subjects]

    @property
    def obs_times(self) -> np.ndarray:
        return np.array([s.obs_time for s in self.subjects])

    @property
    def events(self) -> np.ndarray:
        return np.array([s.event for s in self.subjects], dtype=int)

    @property
    def covariate_matrix(self) -> np.ndarray:
        return np.array([s.covariates for s in self.subjects]).reshape(len(self), len(self.covariate_names))

    def subset(self, ids: Sequence) -> "Dataset":
        return Dataset(tuple(self[i] for i in ids), self.covariate_names)

    def position(self, subject_id) -> int:
        return self._index[subject_id]


@dataclass(frozen=True)
class FoldAssignment:
    V: int
    fold_of: dict
    seed: int

    def members(self, v: int) -> list:
        return [i for i, f in self.fold_of.items() if f == v]

    def training(self, v: int) -> list:
        return [i for i, f in self.fold_of.items() if f != v]


def assign_folds(data: Dataset, V: int, seed: int) -> FoldAssignment:
    """Event-stratified V-fold split.

    Each stratum (events, censored) is shuffled and dealt round-robin; the
    censored stratum continues the deal where the event stratum stopped so
    fold sizes differ by at most one.
    """
    if V < 2:
        raise StratificationError(f"need V >= 2 folds, got {V}")
    ids = np.array(data.ids, dtype=object)
    ev = data.events.astype(bool)
    if ev.sum() < V or (~ev).sum() < V:
        raise StratificationError(
            f"{ev.sum()} events and {(~ev).sum()} censored subjects cannot fill {V} folds")
    rng = np.random.default_rng(seed)
    fold_of = {}
    pos = 0
    for stratum in (ids[ev], ids[~ev]):
        for sid in stratum[rng.permutation(stratum.size)]:
            fold_of[sid] = pos % V + 1
            pos += 1
    fold_of = {sid: fold_of[sid] for sid in data.ids}
    return FoldAssignment(V=V, fold_of=fold_of, seed=seed)


@dataclass(frozen=True)
class RiskSet:
    landmark: float
    member_ids: tuple


def risk_set(data: Dataset, t: float) -> RiskSet:
    if t < 0:
        raise PreconditionError(f"landmark must be non-negative, got {t}")
    return RiskSet(float(t), tuple(s.id for s in data if s.obs_time > t))


def interval_outcome(record: SubjectRecord, t: float, dt: float) -> tuple[float, int]:
    """``(min(T, t + dt), event-in-window)`` for a subject at risk at ``t``."""
    if not record.obs_time > t:
        raise PreconditionError(f"subject {record.id!r} is not at risk at t={t}")
    if not dt > 0:
        raise PreconditionError(f"window length must be positive, got {dt}")
    end = t + dt
    return min(record.obs_time, end), int(record.event == 1 and record.obs_time <= end)


def interval_event_count(data: Dataset, t: float, dt: float) -> int:
    T, d = data.obs_times, data.events
    return int(np.sum((T > t) & (T <= t + dt) & (d == 1)))


def check_interval_events(data: Dataset, t: float, dt: float) -> int:
    """Event count in ``(t, t + dt]``; logs a warning below the usual minimum."""
    n = interval_event_count(data, t, dt)
    if n < MIN_INTERVAL_EVENTS:
        log.warning("only %d events in (%g, %g]; weights will be unstable", n, t, t + dt)
    return n
