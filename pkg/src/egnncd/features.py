"""Channel inputs built from the student-exercise-concept network.

Each entity's one-hot identity is implicit in which row gets selected, so the
four channel inputs are just dense matrices indexed by student or exercise.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .data import Dataset


class EncodingMode(str, Enum):
    BINARY = "binary-correct"
    SIGNED = "signed"


@dataclass(frozen=True, eq=False)
class FeatureMaps:
    x_se: np.ndarray  # N x M
    x_sk: np.ndarray  # N x C
    x_es: np.ndarray  # M x N
    x_ek: np.ndarray  # M x C

    def channel(self, name):
        return {"se": self.x_se, "sk": self.x_sk, "es": self.x_es, "ek": self.x_ek}[name]

    def dump_csv(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("se", "sk", "es", "ek"):
            np.savetxt(out / f"x_{name}.csv", self.channel(name), delimiter=",", fmt="%g")


def build_feature_maps(ds: Dataset, train_idx=None, mode=EncodingMode.BINARY) -> FeatureMaps:
    """Build the four channel matrices from the training logs only.

    ``train_idx`` selects log rows of ``ds``; ``None`` means all logs.
    """
    mode = EncodingMode(mode)
    if train_idx is None:
        train_idx = np.arange(ds.n_logs)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if len(train_idx) and (train_idx.min() < 0 or train_idx.max() >= ds.n_logs):
        raise IndexError("train_idx references logs outside the dataset")
    s, e, y = ds.subset(train_idx)
    correct = y >= 0.5

    x_se = np.zeros((ds.n_students, ds.n_exercises))
    if mode is EncodingMode.BINARY:
        x_se[s, e] = correct.astype(np.float64)
    else:
        x_se[s, e] = np.where(correct, 1.0, -1.0)

    # concept touch counts per student, split by outcome
    q = ds.q
    hit = np.zeros((ds.n_students, ds.n_concepts))
    np.add.at(hit, s[correct], q[e[correct]])
    x_sk = (hit > 0).astype(np.float64)
    if mode is EncodingMode.SIGNED:
        seen = np.zeros_like(hit)
        np.add.at(seen, s, q[e])
        x_sk[(seen > 0) & (hit == 0)] = -1.0

    x_es = np.ascontiguousarray(x_se.T)
    x_ek = q.copy()
    for arr in (x_se, x_sk, x_es, x_ek):
        arr.setflags(write=False)
    return FeatureMaps(x_se=x_se, x_sk=x_sk, x_es=x_es, x_ek=x_ek)


def row_views(fm: FeatureMaps, n: int, m: int):
    """The four input vectors for the pair ``(n, m)``: se, sk for the student; es, ek for the exercise."""
    N, M = fm.x_se.shape
    if not 0 <= n < N:
        raise IndexError(f"student {n} out of range [0, {N})")
    if not 0 <= m < M:
        raise IndexError(f"exercise {m} out of range [0, {M})")
    return fm.x_se[n], fm.x_sk[n], fm.x_es[m], fm.x_ek[m]
