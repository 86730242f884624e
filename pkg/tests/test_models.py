import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pretrainlab.checks import GRADIENT_CASES, gradient_error
from pretrainlab.errors import DimensionError, ValidationError
from pretrainlab.models import (Composite, LinearDecoder, LinearHead, MlpEncoder, SaLayer,
                                TransformerEncoder, init_decoder, init_mlp, init_sa_layer,
                                init_transformer, logistic, loss_and_grads, mlp_forward,
                                represent, sa_forward, transformer_forward)
from pretrainlab.rng import stream


def small_sa(alpha1=0.5, alpha2=0.5, d=3, dk=2, m=4, seed=0):
    return init_sa_layer(d, dk, m, alpha1, alpha2, stream(seed, "test"))


class TestMlp:
    def test_identity_layer_on_nonnegative_input(self):
        enc = MlpEncoder((np.eye(3),))
        x = np.abs(np.random.default_rng(0).standard_normal((4, 3)))
        assert np.array_equal(mlp_forward(enc, x)[-1], x)

    def test_zero_input(self):
        enc = init_mlp(3, 5, 2, stream(0, "t"))
        acts = mlp_forward(enc, np.zeros((2, 3)))
        assert all(np.array_equal(a, 0 * a) for a in acts)

    def test_matches_independent_recomputation(self):
        rng = np.random.default_rng(1)
        w1, w2 = rng.standard_normal((5, 3)), rng.standard_normal((5, 5))
        x = rng.standard_normal((4, 3))
        acts = mlp_forward(MlpEncoder((w1, w2)), x)
        # per-sample loops, a separate code path from the batched forward
        for i in range(4):
            h1 = np.array([max(0.0, float(np.dot(w1[r], x[i]))) for r in range(5)])
            h2 = np.array([max(0.0, float(np.dot(w2[r], h1))) for r in range(5)])
            assert np.allclose(acts[0][i], h1, rtol=1e-14, atol=1e-14)
            assert np.allclose(acts[1][i], h2, rtol=1e-14, atol=1e-14)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            MlpEncoder((np.ones((4, 3)), np.ones((4, 5))))
        enc = MlpEncoder((np.ones((4, 3)),))
        with pytest.raises(DimensionError):
            mlp_forward(enc, np.ones((2, 5)))
        with pytest.raises(ValidationError):
            MlpEncoder(())

    def test_weights_are_immutable_and_finite(self):
        enc = MlpEncoder((np.ones((2, 2)),))
        with pytest.raises(ValueError):
            enc.layers[0][0, 0] = 5.0
        with pytest.raises(ValidationError):
            MlpEncoder((np.array([[np.inf]]),))

    def test_norm_reports(self):
        enc = MlpEncoder((np.diag([2.0, 1.0]),))
        r = enc.norm_reports()[0]
        assert r.spectral == pytest.approx(2.0) and r.two_one == 3.0

    def test_init_variance(self):
        enc = init_mlp(50, 400, 1, stream(3, "init"))
        assert np.var(enc.layers[0]) == pytest.approx(2 / 400, rel=0.05)


class TestSa:
    def test_pure_residual(self):
        layer = small_sa(0.0, 0.0)
        x = np.random.default_rng(0).standard_normal((4, 3))
        assert np.array_equal(sa_forward(layer, x), x)

    def test_single_patch_hand_case(self):
        # K = 1: attention weight is exactly 1
        layer = SaLayer(w_v=np.array([[1.0, 2.0], [0.0, 1.0]]),
                        w_k=np.array([[1.0], [1.0]]), w_q=np.array([[2.0], [0.0]]),
                        w_fc1=np.array([[1.0, -1.0, 0.0], [0.0, 1.0, 1.0]]),
                        w_fc2=np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
                        alpha1=0.5, alpha2=2.0)
        x = np.array([[1.0, 2.0]])
        # xW_V = (1, 4); Z = 0.5·(1,4) + (1,2) = (1.5, 4)
        # ZW_FC1 = (1.5, 2.5, 4); relu same; ·W_FC2 = (1.5+4, 2.5+4) = (5.5, 6.5)
        # out = 2·(5.5, 6.5) + (1.5, 4) = (12.5, 17)
        assert np.allclose(sa_forward(layer, x), [[12.5, 17.0]], rtol=0, atol=1e-14)

    def test_norm_bound_on_random_inputs(self):
        for seed in range(20):
            layer = small_sa(seed=seed)
            x = stream(seed, "x").standard_normal((4, 3))
            W = layer.spectral_cap()
            bound = (layer.alpha2 * W * W + 1) * (layer.alpha1 * 4 * W + 1)
            assert np.linalg.norm(sa_forward(layer, x)) <= bound * np.linalg.norm(x)

    def test_batched_matches_per_sample(self):
        layer = small_sa()
        x = stream(1, "x").standard_normal((5, 4, 3))
        out = sa_forward(layer, x)
        for i in range(5):
            assert np.allclose(out[i], sa_forward(layer, x[i]), rtol=1e-14, atol=1e-14)

    def test_shape_errors(self):
        layer = small_sa()
        with pytest.raises(DimensionError):
            sa_forward(layer, np.ones((4, 5)))
        with pytest.raises((DimensionError, ValidationError)):
            SaLayer(np.ones((3, 3)), np.ones((3, 2)), np.ones((3, 3)), np.ones((3, 4)),
                    np.ones((4, 3)), 0.1, 0.1)
        with pytest.raises(ValidationError):
            SaLayer(np.ones((3, 3)), np.ones((3, 2)), np.ones((3, 2)), np.ones((3, 4)),
                    np.ones((4, 3)), -0.1, 0.1)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_zero_alpha_transformer_is_identity(self, depth, K, seed):
        enc = init_transformer(K, 3, 2, 4, depth, 0.0, 0.0, stream(seed, "init"))
        x = stream(seed, "x").standard_normal((K, 3))
        assert np.array_equal(transformer_forward(enc, x)[-1], x)

    def test_transformer_representation_sums_patches(self):
        enc = init_transformer(3, 4, 2, 5, 2, 0.3, 0.3, stream(0, "init"))
        x = stream(0, "x").standard_normal((6, 3, 4))
        out = transformer_forward(enc, x)[-1]
        assert np.allclose(represent(enc, x), out.sum(axis=1), rtol=1e-14)

    def test_layers_must_share_sizes(self):
        a = init_sa_layer(3, 2, 4, 0.1, 0.1, stream(0, "a"))
        b = init_sa_layer(3, 2, 5, 0.1, 0.1, stream(0, "b"))
        with pytest.raises(DimensionError):
            TransformerEncoder((a, b), 2, 3)


class TestLosses:
    def test_logistic_values(self):
        assert logistic(0.0) == pytest.approx(math.log(2.0), abs=1e-12)
        assert logistic(-1.0) == pytest.approx(1.313262, abs=1e-6)
        assert np.isfinite(logistic(-1000.0))

    def test_zero_margin_model_loss_is_ln2(self):
        enc = MlpEncoder((np.eye(2),))
        model = Composite(enc, head=LinearHead(np.zeros(2), 1.0))
        loss, _ = loss_and_grads(model, np.ones((3, 2)), np.array([1.0, -1.0, 1.0]), "logistic")
        assert loss == pytest.approx(math.log(2.0), abs=1e-15)

    def test_invalid_labels(self):
        model = Composite(MlpEncoder((np.eye(2),)), head=LinearHead(np.zeros(2), 1.0))
        with pytest.raises(ValidationError):
            loss_and_grads(model, np.ones((2, 2)), np.array([1.0, 0.0]), "logistic")

    def test_mse_is_half_mean_squared_error(self):
        model = Composite(MlpEncoder((), in_dim=2), LinearDecoder(np.eye(2)))
        x = np.array([[1.0, 2.0], [0.0, 0.0]])
        y = np.array([[0.0, 0.0], [0.0, 3.0]])
        loss, g = loss_and_grads(model, x, y)
        assert loss == pytest.approx(0.5 * (5.0 + 9.0) / 2)
        # ∂/∂W of (1/2N) Σ‖Wx − y‖² is (1/N) Σ (Wx − y) xᵀ
        assert np.allclose(g["dec.W"], np.outer([1.0, 2.0], [1.0, 2.0]) / 2)

    def test_head_radius_enforced(self):
        with pytest.raises(ValidationError):
            LinearHead(np.array([3.0, 4.0]), 4.9)
        with pytest.raises(ValidationError):
            LinearHead(np.zeros(2), 0.0)

    @pytest.mark.parametrize("case", list(GRADIENT_CASES))
    def test_gradients_match_finite_differences(self, case):
        errs = [gradient_error(case, seed) for seed in range(5)]
        assert max(errs) < 1e-5


def test_with_params_round_trip():
    rng = stream(0, "init")
    enc = init_transformer(2, 3, 2, 4, 2, 0.2, 0.3, rng)
    model = Composite(enc, init_decoder(3, 3, 4, rng), LinearHead(np.zeros(3), 1.0))
    p = model.params()
    assert list(p)[:5] == [f"enc.1.{n}" for n in SaLayer.NAMES]
    again = model.with_params(p)
    assert all(np.array_equal(again.params()[k], v) for k, v in p.items())
