"""Small dense-network numerics with explicit backward functions.

Arrays are float64 unless a float32 input or parameter asks otherwise
(``as_float`` keeps either precision, promoting everything else). Layers are plain functions: a forward
that returns its output and a backward that accumulates parameter gradients and
returns the gradient with respect to the input. There is no tape; models wire
the backward calls themselves.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PRED_CLAMP = 1e-7


def make_rng(*seed_parts: int) -> np.random.Generator:
    """PCG64 generator seeded from an integer tuple (e.g. ``(seed, epoch)``)."""
    return np.random.default_rng([int(s) for s in seed_parts])


def as_float(x) -> np.ndarray:
    """``x`` as an ndarray of float32 or float64, promoting other dtypes to float64."""
    x = np.asarray(x)
    return x if x.dtype in (np.float32, np.float64) else x.astype(np.float64)


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.value = as_float(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def pack_params(params: dict[str, Param]) -> Param:
    """Rebind every param to views of one contiguous buffer.

    The returned ``Param`` owns the buffer; optimizing it updates all members.
    """
    total = sum(p.value.size for p in params.values())
    dtype = np.result_type(np.float32, *(p.value.dtype for p in params.values()))
    flat = Param(np.empty(total, dtype=dtype), np.zeros(total, dtype=dtype))
    start = 0
    for p in params.values():
        n = p.value.size
        flat.value[start:start + n] = p.value.reshape(-1)
        p.value = flat.value[start:start + n].reshape(p.value.shape)
        p.grad = flat.grad[start:start + n].reshape(p.value.shape)
        start += n
    return flat


def xavier_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform matrix with entries in +-sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError("xavier_init needs rows, cols >= 1")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


# -- affine -----------------------------------------------------------------

def linear(x: np.ndarray, W: Param, b: Param) -> np.ndarray:
    """``W x + b`` for a single vector ``x`` or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[1] or b.value.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W.value.T + b.value


def linear_backward(g: np.ndarray, x: np.ndarray, W: Param, b: Param) -> np.ndarray:
    """Accumulate dL/dW = g x^T, dL/db = g; return dL/dx = W^T g."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        W.grad += np.outer(g, x)
        b.grad += g
    else:
        W.grad += g.T @ x
        b.grad += g.sum(axis=0)
    return g @ W.value


# -- activations ------------------------------------------------------------

def sigmoid(x):
    """``1 / (1 + exp(-x))``; exp overflow for very negative ``x`` gives exactly 0."""
    out = np.array(as_float(x))
    np.negative(out, out=out)
    with np.errstate(over="ignore", under="ignore"):
        np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out if out.ndim else out[()]


def sigmoid_backward(y, g):
    """Gradient through sigmoid given its output ``y``."""
    return g * y * (1.0 - y)


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, g):
    return np.where(np.asarray(x) > 0, g, 0.0)


# -- dropout ----------------------------------------------------------------

def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None):
    """Inverted dropout.

    Returns ``(out, scale)`` where ``out = x * scale``; ``scale`` is ``None``
    when the call is the identity (inference or ``rate == 0``). The mask is
    drawn from 16-bit random words, so the drop probability is ``rate``
    rounded to a multiple of 2**-16; survivors are rescaled by the exact
    inverse of the realised keep probability, keeping ``E[out] = x``.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_float(x)
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    cut = min(int(round(rate * 65536)), 65535)
    words = np.frombuffer(rng.bytes(2 * x.size), dtype="<u2").reshape(x.shape)
    scale = np.greater_equal(words, cut).astype(x.dtype)
    scale *= 65536.0 / (65536 - cut)
    return x * scale, scale


# -- loss -------------------------------------------------------------------

def bce_loss(y, yhat):
    """Elementwise binary cross-entropy and its derivative w.r.t. ``yhat``.

    ``yhat`` is clamped to ``[PRED_CLAMP, 1 - PRED_CLAMP]``; the derivative is
    that of the clamped expression (zero where the clamp is active).
    """
    y = np.asarray(y, dtype=np.float64)
    raw = np.asarray(yhat, dtype=np.float64)
    p = np.clip(raw, PRED_CLAMP, 1.0 - PRED_CLAMP)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = (p - y) / (p * (1.0 - p))
    grad = np.where((raw < PRED_CLAMP) | (raw > 1.0 - PRED_CLAMP), 0.0, grad)
    return loss, grad


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    scratch: dict = field(default_factory=dict, repr=False, compare=False)


def adam_step(params: dict[str, Param], state: AdamState):
    """One bias-corrected Adam update over ``params``; zeroes grads afterwards.

    Uses the algebraically equal forms ``m += (1-b1)(g-m)`` and
    ``lr sqrt(c2)/c1 * m / (sqrt(v) + eps sqrt(c2))`` to keep the number of
    full passes over large buffers small.
    """
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    rc2 = np.sqrt(c2)
    for name, p in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        m, v, g = state.m[name], state.v[name], p.grad
        tmp = state.scratch.get(name)
        if tmp is None or tmp.shape != g.shape:
            tmp = state.scratch[name] = np.empty_like(g)
        np.subtract(g, m, out=tmp)
        tmp *= 1.0 - state.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp -= v
        tmp *= 1.0 - state.beta2
        v += tmp
        if state.lr != 0.0:
            np.sqrt(v, out=tmp)
            tmp += state.eps * rc2
            np.divide(m, tmp, out=tmp)
            tmp *= state.lr * rc2 / c1
            p.value -= tmp
        p.zero_grad()


# -- gradient checking ------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str | None
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def rel_error(a, n, floor: float = 1e-8):
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(loss_fn, params: dict[str, Param], tolerance: float = 1e-4,
               step: float = 1e-5, value_fn=None) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn()`` must return the scalar loss and leave the analytic gradient
    in each ``Param.grad`` (it is responsible for zeroing them first).
    ``value_fn()``, if given, returns the same loss without the backward pass
    and is used for the perturbed evaluations.
    """
    value_fn = value_fn or loss_fn
    for p in params.values():
        p.zero_grad()
    first = loss_fn()
    analytic = {k: p.grad.copy() for k, p in params.items()}
    for p in params.values():
        p.zero_grad()
    second = loss_fn()
    if first != second:
        raise RuntimeError(f"loss closure is not deterministic: {first!r} vs {second!r}")

    worst_err, worst_at, count = 0.0, None, 0
    for name, p in params.items():
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = value_fn()
            flat[i] = orig - step
            down = value_fn()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            err = float(rel_error(analytic[name].reshape(-1)[i], numeric))
            count += 1
            if err > worst_err:
                worst_err, worst_at = err, f"{name}[{i}]"
    for p in params.values():
        p.zero_grad()
    return GradCheckReport(worst_err, worst_at, count, tolerance)


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, params: dict[str, Param], state: AdamState | None = None,
                    seed: int | None = None, meta: dict | None = None):
    doc = {
        "params": {k: {"shape": list(p.shape), "values": p.value.reshape(-1).tolist()}
                   for k, p in params.items()},
        "seed": seed,
        "meta": meta or {},
    }
    if state is not None:
        doc["optimizer"] = {
            "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
            "eps": state.eps, "t": state.t,
            "m": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                  for k, v in state.m.items()},
            "v": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                  for k, v in state.v.items()},
        }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Return ``(params, adam_state_or_None, seed, meta)``."""
    doc = json.loads(Path(path).read_text())
    params = {k: Param(np.array(e["values"], dtype=np.float64).reshape(e["shape"]))
              for k, e in doc["params"].items()}
    state = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        state = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], t=o["t"])
        for key in ("m", "v"):
            getattr(state, key).update({k: np.array(e["values"]).reshape(e["shape"])
                                        for k, e in o[key].items()})
    return params, state, doc.get("seed"), doc.get("meta", {})
