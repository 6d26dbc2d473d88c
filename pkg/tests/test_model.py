import math

import numpy as np
import pytest

from egnncd.features import build_feature_maps
from egnncd.model import (CHANNELS, EgnnCD, TrainConfig, batch_loss, channel_backward, channel_forward,
                          fuse, gate_weights, mastery_profile, predict, predict_all, project_nonneg, train)
from egnncd.nn import Param, grad_check, make_rng, sigmoid
from egnncd.synth import SynthSpec, gen_dina


def _zero_model(ds, **kw):
    cfg = TrainConfig(dim=4, layers=2, dropout=0.0, cap_hidden=kw.pop("cap_hidden", 0), dtype="float64", **kw)
    model = EgnnCD.for_dataset(ds, cfg)
    model.flat.value[:] = 0.0
    return model


def _layers(rng, l, d, n_in, scale=1.0):
    Ws = [Param(scale * rng.normal(size=(d, n_in))) for _ in range(l)]
    bs = [Param(scale * rng.normal(size=d)) for _ in range(l)]
    return Ws, bs


# -- channel ------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["literal", "norm"])
def test_channel_zero_weights_give_half(mode):
    Ws = [Param(np.zeros((3, 5))) for _ in range(2)]
    bs = [Param(np.zeros(3)) for _ in range(2)]
    out, _ = channel_forward(np.arange(5.0), Ws, bs, mode)
    np.testing.assert_array_equal(out, 0.5)


@pytest.mark.parametrize("mode", ["literal", "norm"])
def test_channel_single_layer_is_plain_sigmoid(mode):
    Ws, bs = _layers(make_rng(1), 1, 4, 3)
    x = np.array([0.3, -1.0, 2.0])
    out, _ = channel_forward(x, Ws, bs, mode)
    np.testing.assert_allclose(out, sigmoid(Ws[0].value @ x + bs[0].value), rtol=1e-15)


def test_channel_hand_two_layers():
    Ws = [Param(np.array([[0.7]])), Param(np.array([[-1.2]]))]
    bs = [Param(np.array([0.1])), Param(np.array([0.4]))]
    out, _ = channel_forward(np.array([1.0]), Ws, bs, "literal")
    hand = (1 / (1 + math.exp(-0.8)) + 1 / (1 + math.exp(0.8))) / 2
    assert out[0] == pytest.approx(hand, rel=1e-15)
    assert hand == pytest.approx(0.5)  # sigma(0.8) + sigma(-0.8) = 1


def test_channel_width_mismatch():
    Ws, bs = _layers(make_rng(0), 2, 3, 4)
    with pytest.raises(ValueError):
        channel_forward(np.ones(5), Ws, bs)


@pytest.mark.parametrize("mode", ["literal", "norm"])
def test_gates_sum_to_one(mode):
    hidden = make_rng(3).random((7, 3, 5))
    g = gate_weights(hidden, mode)
    np.testing.assert_allclose(g.sum(axis=1), 1.0, rtol=1e-15)
    assert np.all(g > 0)


def test_norm_gate_prefers_larger_norm():
    hidden = np.stack([np.full((1, 4), 0.1), np.full((1, 4), 0.9)], axis=1)
    g = gate_weights(hidden, "norm")
    assert g[0, 1] > g[0, 0]
    assert g[0, 1] == pytest.approx(1 / (1 + math.exp(-1.6)))


@pytest.mark.parametrize("mode", ["literal", "norm"])
@pytest.mark.parametrize("seed", range(3))
def test_channel_grad_check(mode, seed):
    rng = make_rng(seed)
    Ws, bs = _layers(rng, 3, 4, 5)
    X = rng.random((6, 5))
    G = rng.normal(size=(6, 4))
    params = {f"W{i}": w for i, w in enumerate(Ws)} | {f"b{i}": b for i, b in enumerate(bs)}

    def loss():
        for p in params.values():
            p.zero_grad()
        out, cache = channel_forward(X, Ws, bs, mode)
        channel_backward(G, cache, Ws, bs)
        return float((out * G).sum())

    assert grad_check(loss, params, tolerance=1e-6).passed


# -- fuse / predict / projection ---------------------------------------------------

def test_fuse_width_and_order():
    parts = {c: np.full(2, float(i)) for i, c in enumerate(CHANNELS)}
    fused = fuse(dict(reversed(list(parts.items()))))
    assert fused.shape == (8,)
    np.testing.assert_array_equal(fused, [0, 0, 1, 1, 2, 2, 3, 3])
    np.testing.assert_array_equal(fused[:2], parts["se"])
    np.testing.assert_array_equal(fuse(parts, channels=("se",)), parts["se"])


def test_predict_examples():
    assert predict(np.ones(4), np.zeros(4), np.zeros(1)) == 0.5
    assert predict(np.array([2.0, 5.0]), np.array([1.0, 0.0]), 0.0) == pytest.approx(0.8808, abs=1e-4)


def test_predict_monotone_in_fused():
    rng = make_rng(8)
    Wp = rng.random(10)
    base = rng.random(10)
    for j in range(10):
        bumped = base.copy()
        bumped[j] += rng.random()
        assert predict(bumped, Wp, -1.0) >= predict(base, Wp, -1.0)


def test_project_nonneg():
    W = Param(np.array([-0.3, 0.2]))
    project_nonneg(W)
    np.testing.assert_array_equal(W.value, [0.0, 0.2])
    project_nonneg(W)
    np.testing.assert_array_equal(W.value, [0.0, 0.2])


# -- model construction ----------------------------------------------------------

def test_variant_parameter_sets_nest(tiny_ds):
    names = []
    for v in (1, 2, 3, 4):
        m = EgnnCD.for_dataset(tiny_ds, TrainConfig(dim=4, variant=v))
        names.append({k for k in m.params if not k.startswith("cap.")})
    for small, big in zip(names, names[1:]):
        assert small < big


def test_initial_cap_weights_nonnegative(tiny_ds):
    m = EgnnCD.for_dataset(tiny_ds, TrainConfig(dim=4))
    assert m.params["cap.W"].value.min() >= 0 and m.params["cap.Wh"].value.min() >= 0


def test_train_config_validation():
    for bad in (dict(lr=-1), dict(epochs=0), dict(variant=5), dict(gate_mode="x"), dict(dropout=1.0),
                dict(dtype="float16"), dict(layers=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


# -- loss ---------------------------------------------------------------------

def test_batch_loss_half_model_is_ln2(tiny_ds):
    fm = build_feature_maps(tiny_ds)
    model = _zero_model(tiny_ds)
    s, e, y = tiny_ds.subset(np.arange(tiny_ds.n_logs))
    assert batch_loss(model, fm, s, e, y) == pytest.approx(math.log(2), rel=1e-14)


def test_batch_loss_two_log_hand(tiny_ds):
    fm = build_feature_maps(tiny_ds)
    model = _zero_model(tiny_ds)
    # all channel outputs 0.5; fused width 16, W^p = 0.1 everywhere -> z = 0.8 + b
    model.params["cap.W"].value[:] = 0.1
    model.params["cap.b"].value[:] = -0.3
    p = 1 / (1 + math.exp(-0.5))
    hand = (-math.log(p) - math.log(1 - p)) / 2
    loss = batch_loss(model, fm, np.array([0, 0]), np.array([0, 1]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(hand, rel=1e-13)


# -- gradient checks ---------------------------------------------------------------

@pytest.mark.parametrize("gate_mode", ["literal", "norm"])
@pytest.mark.parametrize("cap_hidden", [0, 5])
@pytest.mark.parametrize("variant", [1, 4])
def test_full_model_grad_check(tiny_ds, gate_mode, cap_hidden, variant):
    fm = build_feature_maps(tiny_ds)
    cfg = TrainConfig(dim=3, layers=2, variant=variant, gate_mode=gate_mode, dropout=0.0,
                      cap_hidden=cap_hidden, seed=5, dtype="float64")
    model = EgnnCD.for_dataset(tiny_ds, cfg)
    for k in ("cap.W", "cap.Wh"):
        if k in model.params:
            model.params[k].value[...] += 0.05
    s, e, y = tiny_ds.students, tiny_ds.exercises, tiny_ds.labels.astype(float)

    def loss():
        model.flat.zero_grad()
        return model.loss_and_grad(fm, s, e, y, training=False)

    report = grad_check(loss, model.params, value_fn=lambda: batch_loss(model, fm, s, e, y))
    assert report.passed, report


def test_backward_rejects_override_pass(tiny_ds):
    fm = build_feature_maps(tiny_ds)
    model = _zero_model(tiny_ds)
    _, cache = model.forward(fm, [0], [0], overrides={"ek": np.ones((1, 3))})
    with pytest.raises(ValueError):
        model.backward(cache, np.ones(1))


# -- training ------------------------------------------------------------------

def _quick_cfg(**kw):
    base = dict(dim=8, epochs=6, batch_size=64, cap_hidden=8, early_stop=False)
    base.update(kw)
    return TrainConfig(**base)


def test_train_zero_lr_keeps_projected_init(small_dina):
    ds = small_dina.dataset
    cfg = _quick_cfg(lr=0.0, epochs=2)
    init = EgnnCD.for_dataset(ds, cfg)
    res = train(ds, np.arange(ds.n_logs), cfg)
    np.testing.assert_array_equal(res.model.flat.value, init.flat.value)


def test_train_deterministic(small_dina):
    ds = small_dina.dataset
    a = train(ds, np.arange(ds.n_logs), _quick_cfg(seed=4))
    b = train(ds, np.arange(ds.n_logs), _quick_cfg(seed=4))
    assert a.loss_trace == b.loss_trace
    np.testing.assert_array_equal(a.model.flat.value, b.model.flat.value)
    c = train(ds, np.arange(ds.n_logs), _quick_cfg(seed=5))
    assert c.loss_trace != a.loss_trace


def test_train_projection_after_every_step(small_dina):
    ds = small_dina.dataset
    mins = []
    train(ds, np.arange(ds.n_logs), _quick_cfg(lr=0.05),
          on_step=lambda m, step: mins.append(min(m.params["cap.W"].value.min(), m.params["cap.Wh"].value.min())))
    assert len(mins) == 6 * math.ceil(ds.n_logs / 64)
    assert min(mins) >= 0


def test_train_loss_decreases(small_dina):
    ds = small_dina.dataset
    res = train(ds, np.arange(ds.n_logs), _quick_cfg(epochs=30, lr=0.01))
    assert np.mean(res.loss_trace[-5:]) < np.mean(res.loss_trace[:5])


def test_early_stopping_halts(small_dina):
    ds = small_dina.dataset
    res = train(ds, np.arange(ds.n_logs), _quick_cfg(lr=0.0, dropout=0.0, epochs=50, early_stop=True, patience=3))
    assert res.epochs_run == 4


# -- inference -------------------------------------------------------------------

def test_predict_all_zero_model_and_purity(tiny_ds):
    fm = build_feature_maps(tiny_ds)
    model = _zero_model(tiny_ds)
    np.testing.assert_array_equal(predict_all(model, fm, [(0, 1)]), [0.5])
    model = EgnnCD.for_dataset(tiny_ds, TrainConfig(dim=4, dtype="float64"))
    a = predict_all(model, fm, [(1, 2), (1, 2), (0, 3)])
    assert a[0] == a[1]
    np.testing.assert_array_equal(a, predict_all(model, fm, [(1, 2), (1, 2), (0, 3)]))


def test_predict_all_variant1_constant_per_student(tiny_ds):
    fm = build_feature_maps(tiny_ds)
    model = EgnnCD.for_dataset(tiny_ds, TrainConfig(dim=4, variant=1, seed=2))
    pairs = [(n, m) for n in range(3) for m in range(4)]
    y = predict_all(model, fm, pairs).reshape(3, 4)
    for row in y:
        assert np.all(row == row[0])


def test_predict_all_index_errors(tiny_ds):
    fm = build_feature_maps(tiny_ds)
    model = _zero_model(tiny_ds)
    for pair in [(3, 0), (0, 4), (-1, 0)]:
        with pytest.raises(IndexError):
            predict_all(model, fm, [pair])


def test_mastery_profile_zero_model_and_errors(tiny_ds):
    fm = build_feature_maps(tiny_ds)
    np.testing.assert_array_equal(mastery_profile(_zero_model(tiny_ds), fm, 1), 0.5)
    with pytest.raises(ValueError):
        mastery_profile(EgnnCD.for_dataset(tiny_ds, TrainConfig(dim=4, variant=3)), fm, 0)
    with pytest.raises(IndexError):
        mastery_profile(_zero_model(tiny_ds), fm, 3)


def test_mastery_profile_separates_true_masters():
    gt = gen_dina(SynthSpec(n_students=150, n_exercises=20, n_concepts=4, seed=11))
    ds = gt.dataset
    res = train(ds, np.arange(ds.n_logs), TrainConfig(dim=16, epochs=40, cap_hidden=16, seed=1))
    profiles = np.array([mastery_profile(res.model, res.fm, n) for n in range(ds.n_students)])
    alpha = gt.alpha
    for c in range(ds.n_concepts):
        masters, others = profiles[alpha[:, c] == 1, c], profiles[alpha[:, c] == 0, c]
        assert masters.mean() > others.mean()
