"""Response logs, Q-matrices, dataset statistics and cross-validation folds."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class ResponseLog(NamedTuple):
    student: int
    exercise: int
    score: float


@dataclass(frozen=True)
class LogTable:
    """Parsed log file: dense index arrays plus the raw-id maps."""
    students: np.ndarray
    exercises: np.ndarray
    scores: np.ndarray
    student_ids: dict
    exercise_ids: dict

    @property
    def n_students(self):
        return len(self.student_ids)

    @property
    def n_exercises(self):
        return len(self.exercise_ids)

    def __len__(self):
        return len(self.scores)

    def logs(self):
        return [ResponseLog(int(s), int(e), float(y))
                for s, e, y in zip(self.students, self.exercises, self.scores)]


@dataclass(frozen=True, eq=False)
class Dataset:
    n_students: int
    n_exercises: int
    n_concepts: int
    students: np.ndarray
    exercises: np.ndarray
    scores: np.ndarray
    q: np.ndarray
    id_map: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("students", "exercises"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        scores = np.asarray(self.scores, dtype=np.float64)
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        q = validate_qmatrix(self.q)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

        if min(self.n_students, self.n_exercises, self.n_concepts) <= 0:
            raise DataError("N, M and C must all be positive")
        if q.shape != (self.n_exercises, self.n_concepts):
            raise DataError(f"Q is {q.shape}, expected ({self.n_exercises}, {self.n_concepts})")
        if not (len(self.students) == len(self.exercises) == len(self.scores)):
            raise DataError("log arrays differ in length")
        if len(self.scores):
            if self.students.min() < 0 or self.students.max() >= self.n_students:
                raise DataError("student index out of range")
            if self.exercises.min() < 0 or self.exercises.max() >= self.n_exercises:
                raise DataError("exercise index out of range")
            if not np.all((self.scores >= 0) & (self.scores <= 1)):
                raise DataError("score outside [0, 1]")
            pair = self.students * self.n_exercises + self.exercises
            if len(np.unique(pair)) != len(pair):
                raise DataError("duplicate (student, exercise) pair")

    @property
    def n_logs(self):
        return len(self.scores)

    @property
    def labels(self):
        return (self.scores >= 0.5).astype(np.float64)

    def logs(self):
        return [ResponseLog(int(s), int(e), float(y))
                for s, e, y in zip(self.students, self.exercises, self.scores)]

    def subset(self, idx):
        """Index arrays ``(students, exercises, scores)`` for the given log rows."""
        idx = np.asarray(idx, dtype=np.int64)
        return self.students[idx], self.exercises[idx], self.scores[idx]


@dataclass(frozen=True)
class DatasetStats:
    n_students: int
    n_exercises: int
    n_concepts: int
    n_logs: int
    concepts_per_exercise: float
    avg_log: float

    def table_row(self, name="-"):
        return (f"{name:<10} {self.n_students:>8} {self.n_exercises:>6} {self.n_concepts:>6} "
                f"{self.n_logs:>10} {self.concepts_per_exercise:>8.2f} {self.avg_log:>8.2f}")

    @staticmethod
    def table_header():
        return (f"{'Name':<10} {'|S|':>8} {'|E|':>6} {'|K|':>6} "
                f"{'logs':>10} {'conc/ex':>8} {'AVG_log':>8}")


# -- parsing ----------------------------------------------------------------

def _parse_score(text, lineno):
    try:
        y = float(text)
    except ValueError:
        raise DataError(f"line {lineno}: score {text!r} is not a number") from None
    if not np.isfinite(y) or y < 0 or y > 1:
        raise DataError(f"line {lineno}: score out of range [0, 1]: {text!r}")
    return y


def _dense_index(raw_ids):
    """Map raw id strings to 0..n-1, numerically ordered when all ids are integers."""
    uniq = set(raw_ids)
    try:
        ordered = sorted(uniq, key=int)
    except ValueError:
        ordered = sorted(uniq)
    return {raw: i for i, raw in enumerate(ordered)}


def _read_triples(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataError(f"line {lineno}: expected 3 fields, got {len(row)}")
            s, e, y = (c.strip() for c in row)
            if lineno == 1 and not rows:
                try:
                    float(y)
                except ValueError:
                    continue  # header
            rows.append((s, e, _parse_score(y, lineno), lineno))
    seen = {}
    for s, e, _, lineno in rows:
        if (s, e) in seen:
            raise DataError(f"line {lineno}: duplicate pair ({s}, {e}), first seen on line {seen[s, e]}")
        seen[s, e] = lineno
    return rows


def load_logs(path) -> LogTable:
    """Read ``student_id,exercise_id,score`` rows and densely re-index both id columns."""
    rows = _read_triples(path)
    smap = _dense_index([r[0] for r in rows])
    emap = _dense_index([r[1] for r in rows])
    return LogTable(
        students=np.array([smap[r[0]] for r in rows], dtype=np.int64),
        exercises=np.array([emap[r[1]] for r in rows], dtype=np.int64),
        scores=np.array([r[2] for r in rows], dtype=np.float64),
        student_ids=smap,
        exercise_ids=emap,
    )


def validate_qmatrix(q) -> np.ndarray:
    q = np.asarray(q)
    if q.ndim != 2 or q.size == 0:
        raise DataError(f"Q must be a non-empty 2-D matrix, got shape {q.shape}")
    if not np.all((q == 0) | (q == 1)):
        raise DataError("Q-matrix entries must be 0 or 1")
    empty = np.flatnonzero(q.sum(axis=1) == 0)
    if len(empty):
        raise DataError(f"exercise {empty[0]} tags no concept")
    return q.astype(np.float64)


def load_qmatrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DataError(f"line {lineno}: non-numeric Q entry") from None
    if len({len(r) for r in rows}) > 1:
        raise DataError("Q-matrix rows have different lengths")
    return validate_qmatrix(np.array(rows))


def load_dataset(log_path, q_path) -> Dataset:
    """Load logs and Q together.

    Exercise ids must be integers naming Q rows (``0..M-1``); student ids are
    arbitrary strings, densely re-indexed.
    """
    q = load_qmatrix(q_path)
    rows = _read_triples(log_path)
    smap = _dense_index([r[0] for r in rows])
    exercises = []
    for s, e, _, lineno in rows:
        try:
            m = int(e)
        except ValueError:
            raise DataError(f"line {lineno}: exercise id {e!r} is not a Q row index") from None
        if not 0 <= m < q.shape[0]:
            raise DataError(f"line {lineno}: exercise {m} outside Q rows [0, {q.shape[0]})")
        exercises.append(m)
    if not rows:
        raise DataError(f"{log_path}: no response logs")
    return Dataset(
        n_students=len(smap), n_exercises=q.shape[0], n_concepts=q.shape[1],
        students=np.array([smap[r[0]] for r in rows], dtype=np.int64),
        exercises=np.array(exercises, dtype=np.int64),
        scores=np.array([r[2] for r in rows], dtype=np.float64),
        q=q,
        id_map={"students": smap, "exercises": {str(m): m for m in range(q.shape[0])}},
    )


def write_dataset(ds: Dataset, out_dir, prefix=""):
    """Write ``logs.csv``, ``q.csv`` and ``id_map.json``; returns the three paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path, q_path, map_path = (out / f"{prefix}logs.csv", out / f"{prefix}q.csv",
                                  out / f"{prefix}id_map.json")
    with log_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["student_id", "exercise_id", "score"])
        for s, e, y in zip(ds.students, ds.exercises, ds.scores):
            w.writerow([int(s), int(e), repr(float(y))])
    with q_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in ds.q.astype(int):
            w.writerow(row.tolist())
    id_map = ds.id_map or {"students": {str(i): i for i in range(ds.n_students)},
                           "exercises": {str(i): i for i in range(ds.n_exercises)}}
    map_path.write_text(json.dumps(id_map, sort_keys=True, indent=1))
    return log_path, q_path, map_path


def id_map_hash(ds: Dataset) -> str:
    return hashlib.sha256(json.dumps(ds.id_map, sort_keys=True).encode()).hexdigest()[:16]


# -- statistics -------------------------------------------------------------

def dataset_stats(ds: Dataset) -> DatasetStats:
    """Table-IV style summary.

    ``avg_log`` counts log-concept incidences (each log contributes the number
    of concepts its exercise tags) and normalises by ``N * C``.
    """
    per_ex = ds.q.sum(axis=1)
    incidences = float(per_ex[ds.exercises].sum()) if ds.n_logs else 0.0
    return DatasetStats(
        n_students=ds.n_students,
        n_exercises=ds.n_exercises,
        n_concepts=ds.n_concepts,
        n_logs=ds.n_logs,
        concepts_per_exercise=float(per_ex.mean()),
        avg_log=incidences / (ds.n_students * ds.n_concepts),
    )


# -- folds ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    seed: int
    assignments: np.ndarray

    def test_idx(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_idx(self, fold):
        return np.flatnonzero(self.assignments != fold)

    def digest(self):
        h = hashlib.sha256()
        h.update(f"{self.k}:{self.seed}:".encode())
        h.update(np.ascontiguousarray(self.assignments, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


def make_folds(ds: Dataset, k: int = 5, seed: int = 0, holdout_ratio: float | None = None,
               stratify: bool = True) -> FoldPlan:
    """Assign every log to one of ``k`` test folds.

    With stratification, each student's logs are shuffled and dealt round-robin
    across folds (continuing where the previous student stopped), which keeps
    fold sizes within one of each other and spreads every student over all folds.
    ``holdout_ratio`` is accepted for the 80/20 reading of k=5 and must equal 1/k.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if holdout_ratio is not None:
        if not 0 < holdout_ratio < 1:
            raise ValueError("holdout_ratio must be in (0, 1)")
        if abs(holdout_ratio - 1.0 / k) > 1e-9:
            raise ValueError(f"holdout_ratio {holdout_ratio} is inconsistent with k={k} (expected {1.0 / k})")
    n = ds.n_logs
    if k > n:
        raise ValueError(f"k={k} exceeds the number of logs ({n})")
    rng = np.random.default_rng(seed)
    if stratify:
        by_student = np.argsort(ds.students, kind="stable")
        bounds = np.searchsorted(ds.students[by_student], np.arange(ds.n_students + 1))
        groups = [by_student[bounds[s]:bounds[s + 1]] for s in range(ds.n_students)]
        order = np.concatenate([rng.permutation(groups[s]) for s in rng.permutation(ds.n_students)])
    else:
        order = rng.permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % k
    assignments.setflags(write=False)
    return FoldPlan(k=k, seed=seed, assignments=assignments)
