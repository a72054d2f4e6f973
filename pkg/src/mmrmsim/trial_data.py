"""Longitudinal trial datasets with monotone dropout.

A dataset holds, for ``n`` subjects, ``K`` baseline covariates, a binary
treatment and up to ``J`` outcomes. Dropout is monotone: subject ``i`` is
observed at times ``1 .. T_i - 1`` and missing afterwards, so ``T_i = J + 1``
means fully observed and ``T_i = 1`` means nothing was observed.

Missing outcomes are stored as zeros *together with* an explicit presence
mask (:attr:`TrialDataset.observed`); code that forms weighted sums relies on
the zero padding being annihilated by the weights, never on the value itself.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import (EmptyArm, InconsistentBaseline,
                         NonMonotoneMissingness, TrialDataError)


class Variant(str, enum.Enum):
    """Which mean model to fit."""

    ANCOVA = "ancova"
    MMRM = "mmrm"
    MMRM_INTERACT = "mmrmx"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        value = getattr(value, "variant", value)
        if isinstance(value, cls):
            return value
        aliases = {"mmrm_interact": "mmrmx", "mmrminteract": "mmrmx", "mmrm⊗": "mmrmx"}
        key = str(value).lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown model variant {value!r}") from None


@dataclass(frozen=True)
class Subject:
    id: int
    covariates: np.ndarray
    treatment: int
    outcomes: np.ndarray
    dropout_time: int

    @property
    def observed(self) -> np.ndarray:
        return np.arange(1, len(self.outcomes) + 1) < self.dropout_time


class LongRecord(NamedTuple):
    subject_id: int
    treatment: int
    covariates: tuple
    time: int
    outcome: float | None


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Immutable container of subject-level trial data.

    Parameters
    ----------
    ids : array of int, shape (n,)
    covariates : array, shape (n, K)
    treatment : array of {0, 1}, shape (n,)
    outcomes : array, shape (n, J)
        Entries at or after a subject's dropout time are ignored and stored
        as zero.
    dropout_time : array of int, shape (n,)
        ``T_i`` in ``1 .. J+1``.
    """

    ids: np.ndarray
    covariates: np.ndarray
    treatment: np.ndarray
    outcomes: np.ndarray
    dropout_time: np.ndarray
    observed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(self.outcomes, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        W = np.asarray(self.treatment)
        T = np.asarray(self.dropout_time)
        ids = np.asarray(self.ids)
        n, J = Y.shape
        if X.ndim != 2 or X.shape[0] != n or W.shape != (n,) or T.shape != (n,) or ids.shape != (n,):
            raise TrialDataError("inconsistent array shapes")
        if X.shape[1] < 1 or J < 1:
            raise TrialDataError("need at least one covariate and one timepoint")
        if not np.all((W == 0) | (W == 1)):
            raise TrialDataError("treatment must be 0 or 1")
        if not np.issubdtype(T.dtype, np.integer):
            if not np.all(T == np.round(T)):
                raise TrialDataError("dropout_time must be integer")
            T = T.astype(np.int64)
        if np.any(T < 1) or np.any(T > J + 1):
            raise TrialDataError(f"dropout_time must lie in 1..{J + 1}")
        if len(np.unique(ids)) != n:
            raise TrialDataError("subject ids must be unique")
        if not (np.any(W == 1) and np.any(W == 0)):
            raise EmptyArm("both treatment arms must contain at least one subject")
        if not np.all(np.isfinite(X)):
            raise TrialDataError("covariates must be finite")
        observed = np.arange(1, J + 1)[None, :] < T[:, None]
        if not np.all(np.isfinite(Y[observed])):
            raise TrialDataError("observed outcomes must be finite")
        Y = np.where(observed, Y, 0.0)
        set_ = object.__setattr__
        set_(self, "ids", _readonly(ids.astype(np.int64)))
        set_(self, "covariates", _readonly(X))
        set_(self, "treatment", _readonly(W.astype(np.int64)))
        set_(self, "outcomes", _readonly(Y))
        set_(self, "dropout_time", _readonly(T.astype(np.int64)))
        set_(self, "observed", _readonly(observed))

    # -- shape --------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def K(self) -> int:
        return self.covariates.shape[1]

    @property
    def J(self) -> int:
        return self.outcomes.shape[1]

    @property
    def n_observed(self) -> np.ndarray:
        """Number of observed outcomes per subject (``T_i - 1``)."""
        return self.dropout_time - 1

    @property
    def subjects(self) -> list[Subject]:
        return [
            Subject(int(self.ids[i]), self.covariates[i], int(self.treatment[i]),
                    self.outcomes[i], int(self.dropout_time[i]))
            for i in range(self.n)
        ]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, TrialDataset):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("ids", "covariates", "treatment", "outcomes", "dropout_time")
        )

    __hash__ = None

    # -- constructors ---------------------------------------------------------

    @classmethod
    def from_arrays(cls, covariates, treatment, outcomes, observed=None, ids=None):
        """Build a dataset from arrays.

        When ``observed`` is omitted, missing outcomes are read from NaNs in
        ``outcomes``. Either way the mask must be monotone.
        """
        Y = np.asarray(outcomes, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        mask = ~np.isnan(Y) if observed is None else np.asarray(observed, dtype=bool)
        if mask.shape != Y.shape:
            raise TrialDataError("observed mask must match outcomes shape")
        bad = mask[:, 1:] & ~mask[:, :-1]
        if bad.any():
            i = int(np.argmax(bad.any(axis=1)))
            raise NonMonotoneMissingness(
                f"subject at row {i}: an observed outcome follows a missing one")
        T = mask.sum(axis=1) + 1
        if ids is None:
            ids = np.arange(1, Y.shape[0] + 1)
        return cls(ids, covariates, treatment, np.where(mask, Y, 0.0), T)

    def with_dropout(self, dropout_time) -> "TrialDataset":
        """Return a copy censored at ``min(current, dropout_time)``."""
        T = np.minimum(self.dropout_time, np.asarray(dropout_time, dtype=np.int64))
        return TrialDataset(self.ids, self.covariates, self.treatment, self.outcomes, T)

    def subset(self, rows) -> "TrialDataset":
        rows = np.asarray(rows)
        return TrialDataset(self.ids[rows], self.covariates[rows], self.treatment[rows],
                            self.outcomes[rows], self.dropout_time[rows])

    def complete_case_final(self) -> "TrialDataset":
        """Subjects with the final outcome observed, reduced to that outcome (J=1)."""
        keep = self.dropout_time == self.J + 1
        return TrialDataset(self.ids[keep], self.covariates[keep], self.treatment[keep],
                            self.outcomes[keep, -1:], np.full(int(keep.sum()), 2))


# -- long format --------------------------------------------------------------

def from_long_records(records: Iterable[Sequence], J: int | None = None) -> TrialDataset:
    """Assemble a dataset from long-format rows.

    Each record is ``(subject_id, treatment, covariates, time, outcome)`` with
    ``outcome`` None (or NaN) when missing. Absent (subject, time) rows count
    as missing. ``J`` defaults to the largest time seen.
    """
    by_subject: dict[int, dict] = {}
    max_time = 0
    for rec in records:
        sid, w, x, t, y = rec
        sid, t = int(sid), int(t)
        if t < 1:
            raise TrialDataError(f"subject {sid}: time must be >= 1, got {t}")
        x = tuple(float(v) for v in np.atleast_1d(x))
        w = int(w)
        if w not in (0, 1):
            raise TrialDataError(f"subject {sid}: treatment must be 0 or 1, got {w}")
        entry = by_subject.setdefault(sid, {"w": w, "x": x, "y": {}})
        if entry["w"] != w or entry["x"] != x:
            raise InconsistentBaseline(f"subject {sid}: covariates or treatment vary over time")
        if t in entry["y"]:
            raise TrialDataError(f"subject {sid}: duplicate record for time {t}")
        missing = y is None or (isinstance(y, float) and math.isnan(y))
        entry["y"][t] = None if missing else float(y)
        max_time = max(max_time, t)

    if not by_subject:
        raise TrialDataError("no records")
    J = max_time if J is None else int(J)
    if max_time > J:
        raise TrialDataError(f"time {max_time} exceeds J={J}")
    Ks = {len(e["x"]) for e in by_subject.values()}
    if len(Ks) != 1:
        raise InconsistentBaseline("subjects have different covariate counts")

    ids = sorted(by_subject)
    n = len(ids)
    X = np.array([by_subject[s]["x"] for s in ids], dtype=float)
    W = np.array([by_subject[s]["w"] for s in ids])
    Y = np.zeros((n, J))
    T = np.empty(n, dtype=np.int64)
    for i, sid in enumerate(ids):
        ys = by_subject[sid]["y"]
        T[i] = J + 1
        for t in range(1, J + 1):
            y = ys.get(t)
            if y is None:
                if T[i] == J + 1:
                    T[i] = t
            elif T[i] != J + 1:
                raise NonMonotoneMissingness(
                    f"subject {sid}: outcome at time {t} observed after a missing one")
            else:
                Y[i, t - 1] = y
    return TrialDataset(np.array(ids), X, W, Y, T)


def to_long_records(ds: TrialDataset) -> list[LongRecord]:
    """Inverse of :func:`from_long_records`; one record per (subject, time)."""
    out = []
    for i in range(ds.n):
        x = tuple(float(v) for v in ds.covariates[i])
        for j in range(ds.J):
            y = float(ds.outcomes[i, j]) if ds.observed[i, j] else None
            out.append(LongRecord(int(ds.ids[i]), int(ds.treatment[i]), x, j + 1, y))
    return out


def csv_header(K: int) -> list[str]:
    return ["subject_id", "treatment", *[f"x{k}" for k in range(1, K + 1)], "time", "y"]


def write_csv(ds: TrialDataset, fh) -> None:
    """Write long-format CSV to an open text handle."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(csv_header(ds.K))
    for rec in to_long_records(ds):
        y = "" if rec.outcome is None else repr(rec.outcome)
        w.writerow([rec.subject_id, rec.treatment, *map(repr, rec.covariates), rec.time, y])


def read_csv(fh) -> TrialDataset:
    """Parse long-format CSV from an open text handle or a string."""
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise TrialDataError("empty CSV") from None
    K = len(header) - 4
    if K < 1 or header != csv_header(K):
        raise TrialDataError(
            "header must be 'subject_id,treatment,x1,...,xK,time,y', got " + ",".join(header))
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise TrialDataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            sid = int(row[0])
            w = int(row[1])
            x = tuple(float(c) for c in row[2:2 + K])
            t = int(row[2 + K])
            y = row[3 + K].strip()
            y = float(y) if y else None
        except ValueError as exc:
            raise TrialDataError(f"line {lineno}: {exc}") from None
        records.append((sid, w, x, t, y))
    return from_long_records(records)


# -- indicators and overlap ---------------------------------------------------

@dataclass(frozen=True)
class DropoutIndicators:
    """``d[i, j] = 1`` iff subject ``i`` was last observed at time ``j+1``."""

    d: np.ndarray
    no_outcomes: np.ndarray


def dropout_indicators(ds: TrialDataset) -> DropoutIndicators:
    last = ds.dropout_time - 1  # 1-based last observed time, 0 if none
    d = (np.arange(1, ds.J + 1)[None, :] == last[:, None]).astype(np.int64)
    return DropoutIndicators(d, last == 0)


@dataclass(frozen=True)
class OverlapSets:
    """Row indices observed at both times of each pair (1-based keys)."""

    members: dict
    counts: np.ndarray

    def __getitem__(self, pair):
        return self.members[pair]

    @property
    def empty_pairs(self) -> list[tuple[int, int]]:
        return [p for p, idx in self.members.items() if len(idx) == 0 and p[0] <= p[1]]


def overlap_sets(ds: TrialDataset) -> OverlapSets:
    members = {}
    counts = np.zeros((ds.J, ds.J), dtype=np.int64)
    for j in range(1, ds.J + 1):
        for k in range(1, ds.J + 1):
            idx = np.flatnonzero(max(j, k) < ds.dropout_time)
            members[(j, k)] = idx
            counts[j - 1, k - 1] = len(idx)
    return OverlapSets(members, counts)


# -- design matrices ----------------------------------------------------------

def n_params(variant, J: int, K: int) -> int:
    v = Variant.parse(variant)
    if v is Variant.ANCOVA:
        return 2 + K
    if v is Variant.MMRM:
        return 2 * J + K
    return J * (2 + K)


def parameter_names(variant, J: int, K: int) -> list[str]:
    v = Variant.parse(variant)
    if v is Variant.ANCOVA:
        return ["alpha", *[f"beta_{k}" for k in range(1, K + 1)], "tau"]
    alphas = [f"alpha_{j}" for j in range(1, J + 1)]
    taus = [f"tau_{j}" for j in range(1, J + 1)]
    if v is Variant.MMRM:
        betas = [f"beta_{k}" for k in range(1, K + 1)]
    else:
        betas = [f"beta_{j}_{k}" for j in range(1, J + 1) for k in range(1, K + 1)]
    return alphas + betas + taus


def covariate_center(ds: TrialDataset, variant) -> np.ndarray:
    """Grand mean of the covariates over subjects that enter the likelihood."""
    if Variant.parse(variant) is Variant.ANCOVA:
        used = ds.dropout_time == ds.J + 1
    else:
        used = ds.dropout_time > 1
    if not used.any():
        return np.zeros(ds.K)
    return ds.covariates[used].mean(axis=0)


def build_design(X, W, J: int, variant, center=None) -> np.ndarray:
    """Stacked per-subject design rows, shape (n, J, p).

    Parameter layout is ``[alpha_1..alpha_J, beta(s), tau_1..tau_J]``; for
    the interaction model the betas are time-major blocks of length K.
    """
    v = Variant.parse(variant)
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    if center is not None:
        X = X - center
    n, K = X.shape
    if v is Variant.ANCOVA:
        Z = np.empty((n, 1, 2 + K))
        Z[:, 0, 0] = 1.0
        Z[:, 0, 1:1 + K] = X
        Z[:, 0, -1] = W
        return Z
    eye = np.eye(J)
    if v is Variant.MMRM:
        Z = np.empty((n, J, 2 * J + K))
        Z[:, :, :J] = eye
        Z[:, :, J:J + K] = X[:, None, :]
    else:
        Z = np.zeros((n, J, J * (2 + K)))
        Z[:, :, :J] = eye
        for j in range(J):
            Z[:, j, J + j * K:J + (j + 1) * K] = X
    Z[:, :, -J:] = eye[None, :, :] * W[:, None, None]
    return Z


def design_matrix(ds: TrialDataset, spec, centering: bool = True) -> np.ndarray:
    """Design rows ``Z_i^T`` for every subject, shape (n, rows, p).

    ANCOVA yields a single row per subject (the final-timepoint model);
    the repeated-measures variants yield ``J`` rows.
    """
    v = Variant.parse(spec)
    center = covariate_center(ds, v) if centering else None
    return build_design(ds.covariates, ds.treatment, ds.J, v, center)
