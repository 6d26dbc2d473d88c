"""Reference diagnosers trained with the same Adam/BCE loop as EGNN-CD.

Constrained quantities use reparameterisation: IRT discrimination is
``softplus(raw)``, DINA slip and guess are ``0.5 * sigmoid(raw)``.
"""
from __future__ import annotations

import numpy as np

from .data import Dataset
from .model import TrainConfig, run_training
from .nn import Param, bce_loss, make_rng, sigmoid

KINDS = ("irt", "mirt", "pmf", "dina")


def softplus(x):
    return np.logaddexp(0.0, x)


def _scatter_rows(grad, idx, rows):
    np.add.at(grad, idx, rows)


class _Baseline:
    kind = ""

    def project(self):
        pass

    def loss_and_grad(self, fm, students, exercises, labels, training=True, rng=None):
        yhat, cache = self.forward(fm, students, exercises)
        losses, g = bce_loss(labels, yhat)
        self.backward(cache, g / len(labels))
        return float(losses.mean())

    def predict_pairs(self, students, exercises):
        return self.forward(None, students, exercises)[0]

    def config(self):
        return {"kind": self.kind, **self._shape}


class IRT(_Baseline):
    """2PL: ``sigmoid(a_m * (theta_n - b_m))``."""
    kind = "irt"

    def __init__(self, n_students, n_exercises, seed=0):
        rng = make_rng(seed, 3)
        self._shape = {"n_students": n_students, "n_exercises": n_exercises}
        self.params = {
            "theta": Param(rng.normal(0, 0.1, n_students)),
            "a_raw": Param(np.full(n_exercises, np.log(np.e - 1.0))),  # softplus -> 1
            "b": Param(rng.normal(0, 0.1, n_exercises)),
        }

    @property
    def a(self):
        return softplus(self.params["a_raw"].value)

    def forward(self, fm, s, e):
        th, b = self.params["theta"].value[s], self.params["b"].value[e]
        a = self.a[e]
        yhat = sigmoid(a * (th - b))
        return yhat, (s, e, th, a, b, yhat)

    def backward(self, cache, g):
        s, e, th, a, b, yhat = cache
        gz = g * yhat * (1 - yhat)
        raw = self.params["a_raw"].value[e]
        _scatter_rows(self.params["theta"].grad, s, gz * a)
        _scatter_rows(self.params["b"].grad, e, -gz * a)
        _scatter_rows(self.params["a_raw"].grad, e, gz * (th - b) * sigmoid(raw))


class MIRT(_Baseline):
    """``sigmoid(a_m . theta_n - b_m)`` with k latent traits."""
    kind = "mirt"

    def __init__(self, n_students, n_exercises, k=8, seed=0):
        if k < 1:
            raise ValueError("latent dimension must be >= 1")
        rng = make_rng(seed, 3)
        self._shape = {"n_students": n_students, "n_exercises": n_exercises, "k": k}
        self.params = {
            "theta": Param(rng.normal(0, 0.1, (n_students, k))),
            "a": Param(rng.normal(0, 0.1, (n_exercises, k))),
            "b": Param(np.zeros(n_exercises)),
        }

    def forward(self, fm, s, e):
        th, a = self.params["theta"].value[s], self.params["a"].value[e]
        yhat = sigmoid((th * a).sum(axis=1) - self.params["b"].value[e])
        return yhat, (s, e, th, a, yhat)

    def backward(self, cache, g):
        s, e, th, a, yhat = cache
        gz = g * yhat * (1 - yhat)
        _scatter_rows(self.params["theta"].grad, s, gz[:, None] * a)
        _scatter_rows(self.params["a"].grad, e, gz[:, None] * th)
        _scatter_rows(self.params["b"].grad, e, -gz)


class PMF(_Baseline):
    """Logistic matrix factorisation with student and exercise biases."""
    kind = "pmf"

    def __init__(self, n_students, n_exercises, k=8, seed=0):
        rng = make_rng(seed, 3)
        self._shape = {"n_students": n_students, "n_exercises": n_exercises, "k": k}
        self.params = {
            "u": Param(rng.normal(0, 0.1, (n_students, k))),
            "v": Param(rng.normal(0, 0.1, (n_exercises, k))),
            "student_bias": Param(np.zeros(n_students)),
            "exercise_bias": Param(np.zeros(n_exercises)),
        }

    def forward(self, fm, s, e):
        u, v = self.params["u"].value[s], self.params["v"].value[e]
        z = (u * v).sum(axis=1) + self.params["student_bias"].value[s] + self.params["exercise_bias"].value[e]
        yhat = sigmoid(z)
        return yhat, (s, e, u, v, yhat)

    def backward(self, cache, g):
        s, e, u, v, yhat = cache
        gz = g * yhat * (1 - yhat)
        _scatter_rows(self.params["u"].grad, s, gz[:, None] * v)
        _scatter_rows(self.params["v"].grad, e, gz[:, None] * u)
        _scatter_rows(self.params["student_bias"].grad, s, gz)
        _scatter_rows(self.params["exercise_bias"].grad, e, gz)


class DINA(_Baseline):
    """Sigmoid-relaxed DINA.

    ``eta = prod_{c in Q_m} sigmoid(alpha_nc)``,
    ``yhat = (1 - s_m) eta + g_m (1 - eta)`` with ``s, g = 0.5 * sigmoid(raw)``.
    """
    kind = "dina"

    def __init__(self, q, n_students, seed=0):
        rng = make_rng(seed, 3)
        self.q = np.asarray(q, dtype=np.float64)
        self._shape = {"n_students": n_students, "n_exercises": self.q.shape[0],
                       "n_concepts": self.q.shape[1]}
        M = self.q.shape[0]
        self.params = {
            "alpha": Param(rng.normal(0, 0.1, (n_students, self.q.shape[1]))),
            "slip_raw": Param(np.full(M, -1.3862943611198906)),   # 0.5*sigmoid -> 0.1
            "guess_raw": Param(np.full(M, -1.3862943611198906)),
        }

    @property
    def slip(self):
        return 0.5 * sigmoid(self.params["slip_raw"].value)

    @property
    def guess(self):
        return 0.5 * sigmoid(self.params["guess_raw"].value)

    def forward(self, fm, s, e):
        p = sigmoid(self.params["alpha"].value[s])
        qm = self.q[e]
        # product over tagged concepts; untagged factors are 1
        log_p = np.log(np.where(qm > 0, p, 1.0))
        eta = np.exp(log_p.sum(axis=1))
        sl = 0.5 * sigmoid(self.params["slip_raw"].value[e])
        gu = 0.5 * sigmoid(self.params["guess_raw"].value[e])
        yhat = (1 - sl) * eta + gu * (1 - eta)
        return yhat, (s, e, p, qm, eta, sl, gu)

    def backward(self, cache, g):
        s, e, p, qm, eta, sl, gu = cache
        g_eta = g * (1 - sl - gu)
        # d eta / d alpha_c = eta * (1 - p_c) for tagged c
        _scatter_rows(self.params["alpha"].grad, s, (g_eta * eta)[:, None] * (1 - p) * qm)
        _scatter_rows(self.params["slip_raw"].grad, e, -g * eta * sl * (1 - 2 * sl))
        _scatter_rows(self.params["guess_raw"].grad, e, g * (1 - eta) * gu * (1 - 2 * gu))

    def mastery(self):
        return sigmoid(self.params["alpha"].value)


def irt_forward(theta, a, b):
    return sigmoid(np.asarray(a) * (np.asarray(theta) - np.asarray(b)))


def mirt_forward(theta, a, b):
    return sigmoid(np.dot(np.asarray(a), np.asarray(theta)) - b)


def pmf_forward(u, v, student_bias, exercise_bias):
    return sigmoid(np.dot(u, v) + student_bias + exercise_bias)


def dina_forward(mastery, q_row, slip, guess):
    """``mastery`` are per-concept probabilities for one student; ``q_row`` the exercise's tags."""
    mastery, q_row = np.asarray(mastery, dtype=np.float64), np.asarray(q_row)
    eta = float(np.prod(mastery[q_row > 0]))
    return (1 - slip) * eta + guess * (1 - eta)


def make_baseline(kind, ds: Dataset, cfg: TrainConfig):
    if kind == "irt":
        return IRT(ds.n_students, ds.n_exercises, seed=cfg.seed)
    if kind == "mirt":
        return MIRT(ds.n_students, ds.n_exercises, k=cfg.latent_dim, seed=cfg.seed)
    if kind == "pmf":
        return PMF(ds.n_students, ds.n_exercises, k=cfg.latent_dim, seed=cfg.seed)
    if kind == "dina":
        return DINA(ds.q, ds.n_students, seed=cfg.seed)
    raise ValueError(f"unknown baseline kind {kind!r}; expected one of {KINDS}")


def train_baseline(kind, ds: Dataset, train_idx, cfg: TrainConfig, on_step=None):
    model = make_baseline(kind, ds, cfg)
    s, e, y = ds.subset(train_idx)
    return run_training(model, None, s, e, y, cfg, on_step=on_step)
