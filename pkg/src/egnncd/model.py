"""EGNN-CD: four gated feature channels, concatenation, nonnegative fusion.

A prediction for (student n, exercise m) is

    s_n   = GNN_se(x_se[n]) ++ GNN_sk(x_sk[n])
    e_m   = GNN_es(x_es[m]) ++ GNN_ek(x_ek[m])
    y_hat = sigmoid(W_p . (s_n ++ e_m) + b_p),   W_p >= 0

where each channel is ``l`` parallel ``sigmoid(W_i x + b_i)`` maps of the raw
input, combined by a gate that sums to one.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse

from .data import Dataset
from .features import FeatureMaps, build_feature_maps
from .nn import (AdamState, Param, adam_step, as_float, bce_loss, dropout, make_rng, pack_params, sigmoid,
                 sigmoid_backward, xavier_init)

CHANNELS = ("se", "sk", "es", "ek")
STUDENT_CHANNELS = ("se", "sk")
VARIANTS = {
    1: ("se",),
    2: ("se", "sk"),
    3: ("se", "sk", "es"),
    4: ("se", "sk", "es", "ek"),
}
GATE_MODES = ("literal", "norm")


@dataclass
class TrainConfig:
    lr: float = 0.003
    epochs: int = 200
    batch_size: int = 256
    dropout: float = 0.2
    seed: int = 0
    gate_mode: str = "literal"
    variant: int = 4
    dim: int = 128
    layers: int = 2
    encoding: str = "binary-correct"
    cap_hidden: int = 32
    early_stop: bool = True
    patience: int = 10
    min_delta: float = 1e-5
    latent_dim: int = 8  # baselines only
    dtype: str = "float32"  # EGNN-CD compute precision

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.dim < 1 or self.layers < 1:
            raise ValueError("dim and layers must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {sorted(VARIANTS)}")
        if self.gate_mode not in GATE_MODES:
            raise ValueError(f"gate_mode must be one of {GATE_MODES}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    def to_dict(self):
        return asdict(self)


# -- channel ----------------------------------------------------------------
#
# The ``l`` layers of a channel all read the same input, so their weights are
# handled as one stacked ``(l*d, in_dim)`` matrix: one matmul and one sigmoid
# per channel. Hidden activations are laid out ``(U, l, d)``.

def gate_weights(hidden, gate_mode="literal"):
    """Per-row gate over the ``l`` layer outputs; ``hidden`` is ``(U, l, d)``."""
    U, l = hidden.shape[0], hidden.shape[1]
    if gate_mode == "literal":
        # exp(||x||)/sum_i exp(||x||) has no dependence on i
        return np.full((U, l), 1.0 / l)
    norms = np.sqrt(np.einsum("uld,uld->ul", hidden, hidden))
    z = np.exp(norms - norms.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _gated_forward(X, W, b, layers, gate_mode):
    U = X.shape[0]
    hidden = sigmoid(X @ W.T + b).reshape(U, layers, -1)
    gates = gate_weights(hidden, gate_mode)
    if gate_mode == "literal":
        out = hidden.sum(axis=1) * (1.0 / layers)
    else:
        out = np.einsum("ul,uld->ud", gates, hidden)
    return out, (X, hidden, gates, gate_mode)


def _gated_backward(g_out, cache):
    """Gradient w.r.t. the stacked pre-activations, shape ``(U, l*d)``."""
    X, hidden, gates, gate_mode = cache
    g_out = g_out.reshape(hidden.shape[0], hidden.shape[2])
    if gate_mode == "literal":
        g_hidden = np.broadcast_to((g_out * gates[:, :1])[:, None, :], hidden.shape)
    else:
        norms = np.sqrt(np.einsum("uld,uld->ul", hidden, hidden))
        proj = np.einsum("uld,ud->ul", hidden, g_out)          # G . h_i
        g_norm = gates * (proj - (gates * proj).sum(axis=1, keepdims=True))
        g_hidden = gates[:, :, None] * g_out[:, None, :] + (g_norm / norms)[:, :, None] * hidden
    return sigmoid_backward(hidden, g_hidden).reshape(hidden.shape[0], -1)


def channel_forward(x, Ws, bs, gate_mode="literal"):
    """Gated sum of ``l`` parallel sigmoid layers on the same input.

    ``x`` is ``(U, in_dim)`` (or a single vector). Returns ``(x_mid, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != Ws[0].shape[1]:
        raise ValueError(f"channel input width {X.shape[1]} != {Ws[0].shape[1]}")
    W = np.concatenate([w.value for w in Ws])
    b = np.concatenate([v.value for v in bs])
    out, cache = _gated_forward(X, W, b, len(Ws), gate_mode)
    return (out[0] if single else out), cache


def channel_backward(g_out, cache, Ws, bs):
    """Accumulate the layer gradients of ``channel_forward``."""
    g_pre = _gated_backward(g_out, cache)
    X, d = cache[0], cache[1].shape[2]
    for i, (W, b) in enumerate(zip(Ws, bs)):
        gi = g_pre[:, i * d:(i + 1) * d]
        W.grad += gi.T @ X
        b.grad += gi.sum(axis=0)


# -- fusion and prediction --------------------------------------------------

def fuse(parts: dict, channels=CHANNELS):
    """Concatenate present channel outputs in se, sk, es, ek order (student side first)."""
    present = [parts[c] for c in CHANNELS if c in channels and c in parts]
    return np.concatenate(present, axis=-1)


def predict(fused, Wp, bp):
    """``sigmoid(W_p . fused + b_p)`` for one fused vector or a batch."""
    Wp = as_float(getattr(Wp, "value", Wp)).reshape(-1)
    bp = as_float(getattr(bp, "value", bp)).reshape(-1)[0]
    return sigmoid(as_float(fused) @ Wp + bp)


def project_nonneg(W: Param):
    np.maximum(W.value, 0.0, out=W.value)


# -- model ------------------------------------------------------------------

def _nonneg_layer(rows, cols, rng, dtype):
    """Xavier weights clipped at zero, with the bias centring the pre-activation
    for inputs of 0.5. CAP inputs are sigmoid outputs in (0, 1), so a zero
    bias on nonnegative weights would start every unit saturated."""
    W = np.maximum(xavier_init(rows, cols, rng), 0.0)
    return Param(W.astype(dtype)), Param((-0.5 * W.sum(axis=1)).astype(dtype))


class EgnnCD:
    kind = "egnn"

    def __init__(self, in_dims: dict, dim=128, layers=2, variant=4, gate_mode="literal",
                 dropout_rate=0.2, cap_hidden=0, seed=0, dtype="float64"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant}")
        self.in_dims = dict(in_dims)
        self.dim, self.layers, self.variant = dim, layers, variant
        self.channels = VARIANTS[variant]
        self.gate_mode = gate_mode
        self.dropout_rate = dropout_rate
        self.cap_hidden = cap_hidden
        self.seed = seed
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise ValueError(f"dtype must be float32 or float64, got {dtype}")

        rng = make_rng(seed, 2)
        self.params: dict[str, Param] = {}
        for ch in self.channels:
            for i in range(layers):
                self.params[f"{ch}.W{i}"] = Param(xavier_init(dim, in_dims[ch], rng).astype(self.dtype))
            for i in range(layers):
                self.params[f"{ch}.b{i}"] = Param(np.zeros(dim, dtype=self.dtype))
        fused_width = dim * len(self.channels)
        if cap_hidden:
            self.params["cap.Wh"], self.params["cap.bh"] = _nonneg_layer(cap_hidden, fused_width, rng, self.dtype)
            fused_width = cap_hidden
        self.params["cap.W"], self.params["cap.b"] = _nonneg_layer(1, fused_width, rng, self.dtype)
        self.flat = pack_params(self.params)
        # stacked (l*d, in_dim) views over each channel's consecutive W_i / b_i
        self._stacked = {}
        offsets, pos = {}, 0
        for name, prm in self.params.items():
            offsets[name] = pos
            pos += prm.value.size
        for ch in self.channels:
            w0, b0 = offsets[f"{ch}.W0"], offsets[f"{ch}.b0"]
            nw, nb = layers * dim * self.in_dims[ch], layers * dim
            self._stacked[ch] = tuple(
                buf[o:o + n].reshape(shape) for buf in (self.flat.value, self.flat.grad)
                for o, n, shape in ((w0, nw, (layers * dim, self.in_dims[ch])), (b0, nb, (nb,))))
        self.project()

    @classmethod
    def for_dataset(cls, ds: Dataset, cfg: TrainConfig):
        in_dims = {"se": ds.n_exercises, "sk": ds.n_concepts, "es": ds.n_students, "ek": ds.n_concepts}
        return cls(in_dims, dim=cfg.dim, layers=cfg.layers, variant=cfg.variant,
                   gate_mode=cfg.gate_mode, dropout_rate=cfg.dropout,
                   cap_hidden=cfg.cap_hidden, seed=cfg.seed, dtype=cfg.dtype)


    def project(self):
        """Keep the fusion weights (and hidden CAP weights) nonnegative."""
        project_nonneg(self.params["cap.W"])
        if self.cap_hidden:
            project_nonneg(self.params["cap.Wh"])

    # forward / backward over a batch of (student, exercise) pairs
    def forward(self, fm: FeatureMaps, students, exercises, training=False, rng=None,
                overrides=None):
        """Predictions for the pairs; ``overrides`` may replace channel input rows
        (``{"es": array (B, N), ...}``), used for probe exercises."""
        students = np.asarray(students, dtype=np.int64)
        exercises = np.asarray(exercises, dtype=np.int64)
        overrides = overrides or {}
        # channel outputs are computed once per distinct student / exercise
        sides = {}
        for side, idx in (("student", students), ("exercise", exercises)):
            uniq, inv = np.unique(idx, return_inverse=True)
            sides[side] = (uniq, inv.reshape(-1))
        parts, caches = {}, {}
        for ch in self.channels:
            W, b = self._stacked[ch][:2]
            if ch in overrides:
                rows = np.asarray(overrides[ch], dtype=self.dtype)
                inv = np.arange(len(rows))
            else:
                uniq, inv = sides["student" if ch in STUDENT_CHANNELS else "exercise"]
                rows = fm.channel(ch)[uniq].astype(self.dtype)
            out, caches[ch] = _gated_forward(rows, W, b, self.layers, self.gate_mode)
            parts[ch] = out[inv]
        # one mask over the concatenation = independent masks per channel output
        fused, scale = dropout(fuse(parts, self.channels), self.dropout_rate, training, rng)
        yhat, hidden = self._head(fused)
        side_inv = None if overrides else {k: v[1] for k, v in sides.items()}
        return yhat, (caches, side_inv, fused, scale, hidden, yhat)

    def _head(self, fused):
        hidden = None
        if self.cap_hidden:
            hidden = sigmoid(fused @ self.params["cap.Wh"].value.T + self.params["cap.bh"].value)
            return predict(hidden, self.params["cap.W"], self.params["cap.b"]), hidden
        return predict(fused, self.params["cap.W"], self.params["cap.b"]), hidden

    def head(self, fused):
        """CAP prediction for fused vectors (``(B, width)`` or one vector)."""
        return self._head(np.asarray(fused, dtype=self.dtype))[0]

    def backward(self, cache, g_yhat):
        caches, side_inv, fused, scale, hidden, yhat = cache
        if side_inv is None:
            raise ValueError("cannot backpropagate through a forward pass with overrides")
        g_z = sigmoid_backward(yhat, np.asarray(g_yhat, dtype=self.dtype))
        Wp, bp = self.params["cap.W"], self.params["cap.b"]
        top = hidden if self.cap_hidden else fused
        Wp.grad += (g_z @ top)[None, :]
        bp.grad += g_z.sum()
        g_top = g_z[:, None] * Wp.value
        if self.cap_hidden:
            Wh, bh = self.params["cap.Wh"], self.params["cap.bh"]
            g_pre = sigmoid_backward(hidden, g_top)
            Wh.grad += g_pre.T @ fused
            bh.grad += g_pre.sum(axis=0)
            g_fused = g_pre @ Wh.value
        else:
            g_fused = g_top
        if scale is not None:
            g_fused *= scale
        # sum per-log gradients back onto the distinct rows, one side at a time;
        # a side's channels are adjacent in the fused vector
        d, col = self.dim, 0
        for side in ("student", "exercise"):
            chans = [c for c in self.channels if (c in STUDENT_CHANNELS) == (side == "student")]
            if not chans:
                continue
            inv = side_inv[side]
            counts = np.bincount(inv)
            scatter = sparse.csr_matrix(
                (np.ones(len(inv)), np.argsort(inv, kind="stable"), np.r_[0, np.cumsum(counts)]),
                shape=(len(counts), len(inv)))
            g_side = scatter @ g_fused[:, col:col + d * len(chans)]
            for j, ch in enumerate(chans):
                gW, gb = self._stacked[ch][2:]
                g_pre = _gated_backward(g_side[:, j * d:(j + 1) * d], caches[ch])
                gW += g_pre.T @ caches[ch][0]
                gb += g_pre.sum(axis=0)
            col += d * len(chans)

    def loss_and_grad(self, fm, students, exercises, labels, training=True, rng=None):
        """Mean BCE over the batch; accumulates parameter gradients."""
        yhat, cache = self.forward(fm, students, exercises, training=training, rng=rng)
        losses, g = bce_loss(labels, yhat)
        self.backward(cache, g / len(labels))
        return float(losses.mean())

    def config(self):
        return {"kind": self.kind, "in_dims": self.in_dims, "dim": self.dim, "layers": self.layers,
                "variant": self.variant, "gate_mode": self.gate_mode,
                "dropout_rate": self.dropout_rate, "cap_hidden": self.cap_hidden, "seed": self.seed,
                "dtype": self.dtype.name}


# -- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    model: object
    loss_trace: list
    epochs_run: int
    steps: int


def batch_loss(model, fm, students, exercises, scores):
    """Mean BCE of inference-mode predictions; scores are binarised at 0.5."""
    labels = (np.asarray(scores, dtype=np.float64) >= 0.5).astype(np.float64)
    yhat, _ = model.forward(fm, students, exercises, training=False)
    return float(bce_loss(labels, yhat)[0].mean())


def run_training(model, fm, students, exercises, scores, cfg: TrainConfig, on_step=None):
    """Seeded mini-batch Adam loop shared by EGNN-CD and the baselines.

    After every optimizer step the model's ``project()`` runs, then
    ``on_step(model, step)`` if given.
    """
    labels = (np.asarray(scores, dtype=np.float64) >= 0.5).astype(np.float64)
    students = np.asarray(students, dtype=np.int64)
    exercises = np.asarray(exercises, dtype=np.int64)
    n = len(labels)
    state = AdamState(lr=cfg.lr)
    flat = getattr(model, "flat", None)
    opt_params = {"flat": flat} if flat is not None else model.params
    trace, stall, step = [], 0, 0
    bs = min(cfg.batch_size, n) if n else 1
    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, 0, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            rng = make_rng(cfg.seed, 1, step)
            loss = model.loss_and_grad(fm, students[idx], exercises[idx], labels[idx],
                                       training=True, rng=rng)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
            total += loss * len(idx)
            adam_step(opt_params, state)
            model.project()
            step += 1
            if on_step is not None:
                on_step(model, step)
        trace.append(total / max(n, 1))
        if cfg.early_stop and len(trace) > 1:
            stall = stall + 1 if trace[-2] - trace[-1] < cfg.min_delta else 0
            if stall >= cfg.patience:
                break
    model.optimizer = state
    return TrainResult(model=model, loss_trace=trace, epochs_run=len(trace), steps=step)


def train(ds: Dataset, train_idx, cfg: TrainConfig, on_step=None, fm=None):
    """Build feature maps from the training logs and fit an EGNN-CD model."""
    if fm is None:
        fm = build_feature_maps(ds, train_idx, cfg.encoding)
    model = EgnnCD.for_dataset(ds, cfg)
    s, e, y = ds.subset(train_idx)
    result = run_training(model, fm, s, e, y, cfg, on_step=on_step)
    result.fm = fm
    return result


def predict_all(model, fm, pairs):
    """Inference-mode predictions for a sequence of ``(student, exercise)`` pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    N, M = fm.x_se.shape
    if len(pairs) and (pairs[:, 0].min() < 0 or pairs[:, 0].max() >= N
                       or pairs[:, 1].min() < 0 or pairs[:, 1].max() >= M):
        raise IndexError("pair index out of range")
    yhat, _ = model.forward(fm, pairs[:, 0], pairs[:, 1], training=False)
    return yhat


def mastery_profile(model: EgnnCD, fm: FeatureMaps, n: int):
    """Per-concept mastery estimate for student ``n``.

    Each concept gets a probe exercise tagging only that concept and answered
    by nobody (zero exercise-student row).
    """
    if "ek" not in model.channels:
        raise ValueError("mastery_profile needs the exercise-concept channel (full variant)")
    N, C = fm.x_sk.shape
    if not 0 <= n < N:
        raise IndexError(f"student {n} out of range")
    overrides = {"ek": np.eye(C), "es": np.zeros((C, N))}
    yhat, _ = model.forward(fm, np.full(C, n), np.zeros(C, dtype=np.int64),
                            training=False, overrides=overrides)
    return yhat
