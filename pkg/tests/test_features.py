import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egnncd.data import Dataset, make_folds
from egnncd.features import EncodingMode, build_feature_maps, row_views


def test_single_log_identity():
    ds = Dataset(1, 1, 1, np.array([0]), np.array([0]), np.array([1.0]), np.ones((1, 1)))
    fm = build_feature_maps(ds)
    for name in ("se", "sk", "es", "ek"):
        np.testing.assert_array_equal(fm.channel(name), [[1.0]])
    assert [v.tolist() for v in row_views(fm, 0, 0)] == [[1.0]] * 4


def test_empty_training_set(tiny_ds):
    fm = build_feature_maps(tiny_ds, train_idx=[])
    assert not fm.x_se.any() and not fm.x_sk.any() and not fm.x_es.any()
    np.testing.assert_array_equal(fm.x_ek, tiny_ds.q)


def test_two_student_hand_example():
    ds = Dataset(2, 2, 2, np.array([0, 1]), np.array([0, 1]), np.array([1.0, 0.0]), np.eye(2))
    fm = build_feature_maps(ds, mode="binary-correct")
    np.testing.assert_array_equal(fm.x_se, [[1, 0], [0, 0]])
    np.testing.assert_array_equal(fm.x_sk, [[1, 0], [0, 0]])
    signed = build_feature_maps(ds, mode=EncodingMode.SIGNED)
    np.testing.assert_array_equal(signed.x_se, [[1, 0], [0, -1]])
    np.testing.assert_array_equal(signed.x_sk, [[1, 0], [0, -1]])


def test_signed_sk_any_correct_wins(tiny_ds):
    # student 0: exercise 0 (concept 0) correct, exercise 1 (concept 1) wrong,
    # exercise 2 (concepts 0, 1) correct -> concept 1 counts as correct
    fm = build_feature_maps(tiny_ds, mode="signed")
    np.testing.assert_array_equal(fm.x_sk[0], [1, 1, 0])
    # student 2: exercise 3 (concept 2) wrong, never correct on concept 2
    assert fm.x_sk[2, 2] == -1


def test_row_views_zero_row_and_bounds(tiny_ds):
    fm = build_feature_maps(tiny_ds, train_idx=[0])
    se, sk, es, ek = row_views(fm, 2, 3)
    assert not se.any() and not sk.any()
    np.testing.assert_array_equal(ek, tiny_ds.q[3])
    with pytest.raises(IndexError):
        row_views(fm, 3, 0)
    with pytest.raises(IndexError):
        row_views(fm, 0, -1)


def test_train_idx_out_of_range(tiny_ds):
    with pytest.raises(IndexError):
        build_feature_maps(tiny_ds, train_idx=[0, 10])


def test_matrices_are_read_only(tiny_ds):
    fm = build_feature_maps(tiny_ds)
    with pytest.raises(ValueError):
        fm.x_se[0, 0] = 5


def test_dump_csv(tmp_path, tiny_ds):
    fm = build_feature_maps(tiny_ds)
    fm.dump_csv(tmp_path)
    back = np.loadtxt(tmp_path / "x_sk.csv", delimiter=",")
    np.testing.assert_array_equal(back, fm.x_sk)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["binary-correct", "signed"]))
def test_invariants_on_random_folds(small_dina, seed, mode):
    ds = small_dina.dataset
    plan = make_folds(ds, 5, seed)
    train, test = plan.train_idx(seed % 5), plan.test_idx(seed % 5)
    fm = build_feature_maps(ds, train, mode)
    np.testing.assert_array_equal(fm.x_es, fm.x_se.T)
    np.testing.assert_array_equal(fm.x_ek, ds.q)
    assert np.abs(fm.x_se).max() <= 1 and np.abs(fm.x_sk).max() <= 1
    # no leakage: held-out pairs are zero
    assert not fm.x_se[ds.students[test], ds.exercises[test]].any()
    # pure function of the training logs
    again = build_feature_maps(ds, train, mode)
    np.testing.assert_array_equal(again.x_sk, fm.x_sk)
