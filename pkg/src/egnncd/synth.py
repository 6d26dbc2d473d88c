"""Synthetic response data with known latent ground truth (DINA and 2PL IRT)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, write_dataset
from .nn import sigmoid


@dataclass
class SynthSpec:
    n_students: int = 500
    n_exercises: int = 40
    n_concepts: int = 8
    concepts_per_exercise: float = 2.0
    process: str = "dina"
    slip: float = 0.1
    guess: float = 0.1
    ability_sd: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if min(self.n_students, self.n_exercises, self.n_concepts) < 1:
            raise ValueError("counts must be >= 1")
        if self.process not in ("dina", "irt"):
            raise ValueError(f"unknown process {self.process!r}")
        if not (0 <= self.slip <= 0.5 and 0 <= self.guess <= 0.5):
            raise ValueError("slip and guess must lie in [0, 0.5]")
        if self.ability_sd < 0:
            raise ValueError("ability_sd must be >= 0")
        if not 1 <= self.concepts_per_exercise <= self.n_concepts:
            raise ValueError(f"concepts_per_exercise must be in [1, n_concepts={self.n_concepts}]")


@dataclass
class GroundTruth:
    spec: SynthSpec
    dataset: Dataset
    alpha: np.ndarray | None = None
    theta: np.ndarray | None = None
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    prob: np.ndarray = field(default=None, repr=False)

    def to_json(self):
        doc = {"spec": asdict(self.spec)}
        for name in ("alpha", "theta", "a", "b"):
            val = getattr(self, name)
            if val is not None:
                doc[name] = val.tolist()
        return json.dumps(doc, sort_keys=True)


def gen_qmatrix(spec: SynthSpec, rng=None, max_tries=1000) -> np.ndarray:
    """Random Q with mean row size ``concepts_per_exercise`` and every concept used."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    M, C, target = spec.n_exercises, spec.n_concepts, spec.concepts_per_exercise
    base, frac = int(np.floor(target)), target - np.floor(target)
    # exact allocation of the fractional part keeps the mean on target
    n_up = int(round(frac * M))
    for _ in range(max_tries):
        sizes = np.full(M, base)
        sizes[rng.permutation(M)[:n_up]] += 1
        sizes = np.clip(sizes, 1, C)
        q = np.zeros((M, C))
        for m in range(M):
            q[m, rng.choice(C, size=sizes[m], replace=False)] = 1.0
        if q.sum(axis=0).min() > 0:
            return q
    raise ValueError(f"could not cover all {C} concepts with {M} exercises "
                     f"of mean size {target} after {max_tries} tries")


def _full_dataset(spec, q, correct):
    N, M = correct.shape
    s, e = np.meshgrid(np.arange(N), np.arange(M), indexing="ij")
    return Dataset(n_students=N, n_exercises=M, n_concepts=q.shape[1],
                   students=s.reshape(-1), exercises=e.reshape(-1),
                   scores=correct.reshape(-1).astype(np.float64), q=q)


def gen_dina(spec: SynthSpec) -> GroundTruth:
    rng = np.random.default_rng(spec.seed)
    q = gen_qmatrix(spec, rng)
    alpha = (rng.random((spec.n_students, spec.n_concepts)) < 0.5).astype(np.float64)
    # eta = 1 iff every required concept is mastered
    missing = (1.0 - alpha) @ q.T
    eta = (missing == 0).astype(np.float64)
    prob = (1.0 - spec.slip) * eta + spec.guess * (1.0 - eta)
    correct = rng.random(prob.shape) < prob
    return GroundTruth(spec=spec, dataset=_full_dataset(spec, q, correct), alpha=alpha, prob=prob)


def gen_irt(spec: SynthSpec) -> GroundTruth:
    rng = np.random.default_rng(spec.seed)
    q = gen_qmatrix(spec, rng)
    theta = rng.normal(0.0, spec.ability_sd, spec.n_students)
    b = rng.normal(0.0, 1.0, spec.n_exercises)
    a = np.maximum(np.abs(rng.normal(1.0, 0.25, spec.n_exercises)), 0.2)
    prob = sigmoid(a[None, :] * (theta[:, None] - b[None, :]))
    correct = rng.random(prob.shape) < prob
    return GroundTruth(spec=spec, dataset=_full_dataset(spec, q, correct),
                       theta=theta, a=a, b=b, prob=prob)


def generate(spec: SynthSpec) -> GroundTruth:
    return gen_dina(spec) if spec.process == "dina" else gen_irt(spec)


def write_ground_truth(gt: GroundTruth, out_dir):
    """Write logs.csv, q.csv, id_map.json and ground_truth.json into ``out_dir``."""
    paths = write_dataset(gt.dataset, out_dir)
    truth = Path(out_dir) / "ground_truth.json"
    truth.write_text(gt.to_json())
    return (*paths, truth)
