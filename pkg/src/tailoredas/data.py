"""Latent and observed surveillance data.

A :class:`FullSubject` carries everything the simulator knows (event time,
censoring time, the planned biopsy schedule). :func:`observe` turns it into
the :class:`SubjectRecord` an analyst would actually see: biopsies that were
neither censored nor missed, truncated after the first positive result.
:class:`Dataset` stacks records into flat arrays for the estimators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyData, NoMeasurement


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CovariateTrajectory:
    """Covariates linear in log-time: ``W_l(t) = a0_l + a1_l * log(t / nu)``.

    Measurements add independent Gaussian noise with sd ``noise_sd``.
    """

    a0: np.ndarray
    a1: np.ndarray
    noise_sd: float = math.sqrt(0.1)
    nu: float = 30.0

    def __post_init__(self):
        a0 = _frozen(self.a0)
        a1 = _frozen(self.a1)
        if a0.size < 1 or a0.shape != a1.shape:
            raise ValueError("a0 and a1 must be non-empty vectors of equal length")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "a1", a1)

    @property
    def n_covariates(self) -> int:
        return self.a0.size

    def latent(self, t) -> np.ndarray:
        """Noise-free covariates; shape ``(L,)`` for scalar t, else ``(m, L)``."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("covariate trajectories are defined for t > 0 only")
        logt = np.log(t / self.nu)
        return self.a0 + np.multiply.outer(logt, self.a1)

    def measure(self, t, rng: np.random.Generator) -> np.ndarray:
        w = self.latent(t)
        return w + self.noise_sd * rng.standard_normal(w.shape)


@dataclass(frozen=True)
class FullSubject:
    """A subject as generated, before censoring, missingness and dropout."""

    trajectory: CovariateTrajectory
    event_time: float
    censor_time: float
    biopsy_times: np.ndarray
    miss_flags: np.ndarray | None = None  # 1 = biopsy performed
    covariate_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    covariate_values: np.ndarray | None = None
    id: int = 0

    def __post_init__(self):
        times = _frozen(self.biopsy_times)
        if np.any(times <= 0) or np.any(np.diff(times) <= 0):
            raise ValueError("biopsy times must be positive and strictly increasing")
        flags = np.ones(times.size, dtype=int) if self.miss_flags is None else self.miss_flags
        flags = _frozen(flags, dtype=int)
        if flags.shape != times.shape:
            raise ValueError("miss_flags must align with biopsy_times")
        ctimes = _frozen(self.covariate_times)
        L = self.trajectory.n_covariates
        cvals = (
            np.empty((0, L))
            if self.covariate_values is None
            else np.array(self.covariate_values, dtype=float).reshape(ctimes.size, L)
        )
        cvals.setflags(write=False)
        if not (self.event_time > 0 and self.censor_time > 0):
            raise ValueError("event and censoring times must be positive")
        object.__setattr__(self, "biopsy_times", times)
        object.__setattr__(self, "miss_flags", flags)
        object.__setattr__(self, "covariate_times", ctimes)
        object.__setattr__(self, "covariate_values", cvals)

    @property
    def progressed(self) -> np.ndarray:
        """``1{T <= N_k}`` for each scheduled biopsy."""
        return (self.event_time <= self.biopsy_times).astype(int)

    @property
    def uncensored(self) -> np.ndarray:
        """``1{C > N_k}`` for each scheduled biopsy."""
        return (self.censor_time > self.biopsy_times).astype(int)


class Truth(NamedTuple):
    event_time: float
    censor_time: float  # inf when uncensored


@dataclass(frozen=True)
class SubjectRecord:
    """Observed biopsy sequence and covariate measurements of one subject.

    ``biopsy_times[0] == 0`` is the baseline (confirmatory) biopsy and is
    always negative. With ``immediate_dropout`` (the default) at most one
    result is positive and it is the last one.
    """

    id: int
    biopsy_times: np.ndarray
    biopsy_results: np.ndarray
    covariate_times: np.ndarray
    covariate_values: np.ndarray
    truth: Truth | None = None
    immediate_dropout: bool = True

    def __post_init__(self):
        times = _frozen(self.biopsy_times)
        results = _frozen(self.biopsy_results, dtype=int)
        if times.size == 0 or times[0] != 0.0:
            times = _frozen(np.concatenate([[0.0], times]))
            results = _frozen(np.concatenate([[0], results]), dtype=int)
        if times.shape != results.shape:
            raise ValueError("biopsy times and results must align")
        if results[0] != 0:
            raise ValueError("baseline biopsy must be negative")
        if np.any(np.diff(times) <= 0):
            raise ValueError("observed biopsy times must be strictly increasing")
        if not np.isin(results, (0, 1)).all():
            raise ValueError("biopsy results must be 0 or 1")
        if self.immediate_dropout:
            pos = np.flatnonzero(results)
            if pos.size > 1 or (pos.size == 1 and pos[0] != results.size - 1):
                raise ValueError("with immediate dropout a positive biopsy must be the last one")
        ctimes = _frozen(self.covariate_times)
        cvals = np.array(self.covariate_values, dtype=float)
        if ctimes.size:
            cvals = cvals.reshape(ctimes.size, -1)
        else:
            cvals = cvals.reshape(0, cvals.shape[-1] if cvals.ndim == 2 else 0)
        if np.any(np.diff(ctimes) < 0):
            order = np.argsort(ctimes, kind="stable")
            ctimes, cvals = _frozen(ctimes[order]), cvals[order]
        cvals.setflags(write=False)
        object.__setattr__(self, "biopsy_times", times)
        object.__setattr__(self, "biopsy_results", results)
        object.__setattr__(self, "covariate_times", ctimes)
        object.__setattr__(self, "covariate_values", cvals)

    @property
    def n_observed(self) -> int:
        """Number of observed biopsies, not counting the baseline."""
        return self.biopsy_times.size - 1

    @property
    def progressed(self) -> bool:
        return bool(self.biopsy_results.any())


class AdjacentPair(NamedTuple):
    t_prev: float
    t_curr: float
    delta_prev: int
    delta_curr: int


def observe(subject: FullSubject, dropout: bool = True) -> SubjectRecord:
    """Apply censoring, missed visits and immediate dropout.

    Biopsy k is seen iff it is uncensored, was performed, and no earlier
    performed biopsy was positive. ``dropout=False`` keeps biopsies after a
    positive result; it exists to build panel-status data for comparisons.
    """
    keep = (subject.uncensored * subject.miss_flags).astype(bool)
    times = subject.biopsy_times[keep]
    results = subject.progressed[keep]
    if dropout:
        pos = np.flatnonzero(results)
        if pos.size:
            times, results = times[: pos[0] + 1], results[: pos[0] + 1]
    censor = subject.censor_time
    return SubjectRecord(
        id=subject.id,
        biopsy_times=np.concatenate([[0.0], times]),
        biopsy_results=np.concatenate([[0], results]),
        covariate_times=subject.covariate_times,
        covariate_values=subject.covariate_values,
        truth=Truth(float(subject.event_time), float(censor)),
        immediate_dropout=dropout,
    )


def adjacent_pairs(record: SubjectRecord) -> list[AdjacentPair]:
    """Consecutive observed biopsies whose first member is negative."""
    t, d = record.biopsy_times, record.biopsy_results
    return [
        AdjacentPair(float(t[k - 1]), float(t[k]), 0, int(d[k]))
        for k in range(1, t.size)
        if d[k - 1] == 0
    ]


def _last_index_at_or_before(times: np.ndarray, t: float) -> int:
    return int(np.searchsorted(times, t, side="right")) - 1


def features_at(record: SubjectRecord, t: float) -> np.ndarray:
    """Most recent covariates at or before ``t`` followed by ``log t``."""
    if t <= 0:
        raise ValueError("decision times must be positive (the log-time feature needs t > 0)")
    k = _last_index_at_or_before(record.covariate_times, t)
    if k < 0:
        raise NoMeasurement(f"subject {record.id} has no covariate measurement at or before t={t}")
    return np.append(record.covariate_values[k], math.log(t))


class Dataset:
    """An ordered collection of observed subject records.

    Biopsies and adjacent pairs are flattened into arrays tagged with the
    position of their subject, which is what the kernel estimators consume.
    Bootstrap and cross-validation subsets may repeat records.
    """

    def __init__(self, records: Sequence[SubjectRecord]):
        self.records: tuple[SubjectRecord, ...] = tuple(records)
        if not self.records:
            raise EmptyData("a dataset needs at least one subject")
        n = len(self.records)
        counts = np.array([r.biopsy_times.size for r in self.records])
        self.biopsy_subject = np.repeat(np.arange(n), counts)
        self.biopsy_time = np.concatenate([r.biopsy_times for r in self.records])
        self.biopsy_result = np.concatenate([r.biopsy_results for r in self.records])

        # pairs (k-1, k) with the first member negative, flattened
        same = self.biopsy_subject[1:] == self.biopsy_subject[:-1]
        first_neg = self.biopsy_result[:-1] == 0
        idx = np.flatnonzero(same & first_neg)
        self.pair_subject = self.biopsy_subject[idx + 1]
        self.pair_prev = self.biopsy_time[idx]
        self.pair_curr = self.biopsy_time[idx + 1]
        self.pair_result = self.biopsy_result[idx + 1]

        # follow-up ends at the first positive biopsy, else at the last one
        self.followup_end = self.biopsy_time[np.cumsum(counts) - 1].copy()
        pos = np.flatnonzero(self.biopsy_result)
        subj, first = np.unique(self.biopsy_subject[pos], return_index=True)
        self.followup_end[subj] = self.biopsy_time[pos[first]]
        self.progressed = np.zeros(n, dtype=bool)
        self.progressed[subj] = True
        self._features: dict[float, np.ndarray] = {}

    @property
    def n(self) -> int:
        return len(self.records)

    def __len__(self) -> int:
        return self.n

    @property
    def n_covariates(self) -> int:
        for r in self.records:
            if r.covariate_values.ndim == 2 and r.covariate_values.shape[1]:
                return r.covariate_values.shape[1]
        return 0

    @property
    def has_truth(self) -> bool:
        return all(r.truth is not None for r in self.records)

    @property
    def event_time(self) -> np.ndarray:
        return np.array([np.nan if r.truth is None else r.truth.event_time for r in self.records])

    @property
    def censor_time(self) -> np.ndarray:
        return np.array([np.nan if r.truth is None else r.truth.censor_time for r in self.records])

    def biopsy_time_scale(self) -> float:
        """Sample sd of observed (non-baseline) biopsy times."""
        t = self.biopsy_time[self.biopsy_time > 0]
        return float(np.std(t, ddof=1)) if t.size > 1 else 1.0

    def features(self, t: float) -> np.ndarray:
        """Feature matrix at decision time ``t``; rows without data are NaN."""
        key = float(t)
        cached = self._features.get(key)
        if cached is not None:
            return cached
        if key <= 0:
            raise ValueError("decision times must be positive (the log-time feature needs t > 0)")
        L = self.n_covariates
        out = np.full((self.n, L + 1), np.nan)
        with_covs = [i for i, r in enumerate(self.records) if r.covariate_times.size]
        if with_covs:
            times = np.concatenate([self.records[i].covariate_times for i in with_covs])
            values = np.concatenate([self.records[i].covariate_values for i in with_covs])
            owner = np.repeat(with_covs, [self.records[i].covariate_times.size for i in with_covs])
            # times are sorted within a subject: keep each subject's last one <= t
            idx = np.flatnonzero(times <= key)
            last = idx[np.append(owner[idx][1:] != owner[idx][:-1], True)] if idx.size else idx
            out[owner[last], :L] = values[last]
            out[owner[last], L] = math.log(key)
        out.setflags(write=False)
        self._features[key] = out
        return out

    def subset(self, index: Iterable[int]) -> "Dataset":
        return Dataset([self.records[i] for i in index])


# ---------------------------------------------------------------------------
# JSON-lines storage
# ---------------------------------------------------------------------------


def record_to_json(record: SubjectRecord) -> dict:
    truth = None
    if record.truth is not None:
        c = record.truth.censor_time
        truth = {"T": record.truth.event_time, "C": None if math.isinf(c) else c}
    out = {
        "id": int(record.id),
        "biopsies": [[float(t), int(d)] for t, d in zip(record.biopsy_times, record.biopsy_results)],
        "covariates": [
            [float(t), [float(x) for x in v]]
            for t, v in zip(record.covariate_times, record.covariate_values)
        ],
        "truth": truth,
    }
    if not record.immediate_dropout:
        out["immediate_dropout"] = False
    return out


def record_from_json(obj: dict) -> SubjectRecord:
    biopsies = obj.get("biopsies") or [[0.0, 0]]
    covs = obj.get("covariates") or []
    truth = obj.get("truth")
    if truth is not None:
        c = truth.get("C")
        truth = Truth(float(truth["T"]), math.inf if c is None else float(c))
    return SubjectRecord(
        id=int(obj["id"]),
        biopsy_times=[b[0] for b in biopsies],
        biopsy_results=[b[1] for b in biopsies],
        covariate_times=[c[0] for c in covs],
        covariate_values=[c[1] for c in covs] if covs else np.empty((0, 0)),
        truth=truth,
        immediate_dropout=obj.get("immediate_dropout", True),
    )


def write_jsonl(dataset: Dataset | Sequence[SubjectRecord], path) -> None:
    records = dataset.records if isinstance(dataset, Dataset) else dataset
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(record_to_json(r), separators=(",", ":")) + "\n")


def read_jsonl(path) -> Dataset:
    records = []
    with open(Path(path)) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed subject record ({exc})") from exc
    return Dataset(records)
