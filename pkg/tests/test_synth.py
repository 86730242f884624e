import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from pretrainlab.errors import ValidationError
from pretrainlab.pretrain import SampleSizeWarning
from pretrainlab.synth import aggregate, gen_synth, min_pairwise_distance, planted_labels


def test_smallest_case():
    t = gen_synth(2, 2, 2, c1_target=1.0, c2_target=1.0, seed=0)
    assert t.pretrain_raw.shape == (2, 2) and t.downstream_x.shape == (2, 2)
    assert np.linalg.norm(t.pretrain_raw[0] - t.pretrain_raw[1]) >= 1.0
    assert t.c1 >= 1.0 and t.c2 >= 1.0


def test_min_pairwise_distance_oracle():
    x = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 1.0]])
    assert min_pairwise_distance(x) == 1.0
    assert min_pairwise_distance(x[:1]) == float("inf")


def test_determinism():
    a = gen_synth(30, 8, 5, seed=7, n_test=10)
    b = gen_synth(30, 8, 5, seed=7, n_test=10)
    for f in ("pretrain_raw", "downstream_x", "downstream_y", "w_star", "test_x", "test_y"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    c = gen_synth(30, 8, 5, seed=8, n_test=10)
    assert not np.array_equal(a.pretrain_raw, c.pretrain_raw)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(2, 40), st.integers(2, 20), st.integers(2, 8),
       st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_separation_and_planted_rule(seed, N, n, d, c1, c2):
    try:
        t = gen_synth(N, n, d, c1_target=c1, c2_target=c2, seed=seed, margin=0.05, n_test=5)
    except ValidationError as e:
        assert "cannot separate" in str(e)  # refused rather than silently violated
        return
    assert pdist(t.pretrain_raw).min() >= c1 and t.c1 >= c1
    assert pdist(t.downstream_x).min() >= c2 and t.c2 >= c2
    np.testing.assert_array_equal(np.where(t.downstream_x @ t.w_star > 0, 1.0, -1.0),
                                  t.downstream_y)
    np.testing.assert_array_equal(planted_labels(t.test_x, t.w_star), t.test_y)


def test_margin_respected():
    t = gen_synth(20, 50, 4, margin=0.5, seed=1)
    assert np.min(np.abs(t.downstream_x @ t.w_star)) >= 0.5


def test_infeasible_request():
    with pytest.raises(ValidationError, match="cannot separate"):
        gen_synth(500, 4, 1, c1_target=100.0, seed=0)


@pytest.mark.parametrize("kw", [dict(N=1), dict(d=0), dict(c1_target=0.0), dict(margin=-1.0),
                                dict(label_rule="quadratic"),
                                dict(label_rule="multiclass", num_classes=1)])
def test_argument_validation(kw):
    args = dict(N=10, n=4, d=3) | kw
    with pytest.raises(ValidationError):
        gen_synth(**args)


def test_multiclass():
    t = gen_synth(20, 30, 4, label_rule="multiclass", num_classes=3, seed=2, margin=0.05)
    assert t.downstream_y.shape == (30, 3)
    np.testing.assert_array_equal(t.downstream_y.sum(axis=1), 1.0)
    np.testing.assert_array_equal(np.argmax(t.downstream_x @ t.w_star.T, axis=1),
                                  np.argmax(t.downstream_y, axis=1))
    s = np.sort(t.downstream_x @ t.w_star.T, axis=1)
    assert np.min(s[:, -1] - s[:, -2]) >= 0.05


def test_patch_task():
    t = gen_synth(12, 6, 3, K=4, seed=3)
    assert t.pretrain_raw.shape == (12, 4, 3) and t.patch_count == 4
    assert min_pairwise_distance(t.pretrain_raw) >= 1.0
    np.testing.assert_array_equal(aggregate(t.downstream_x), t.downstream_x.sum(axis=1))
    np.testing.assert_array_equal(planted_labels(t.downstream_x, t.w_star), t.downstream_y)


def test_sample_size_warning():
    with pytest.warns(SampleSizeWarning):
        gen_synth(10, 8, 3, L=2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gen_synth(200, 8, 8, L=2)  # 8^1.5 · 2^(2/3) ≈ 35.9
