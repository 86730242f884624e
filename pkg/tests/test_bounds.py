import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import bound_sweep_violations, planted_family
from pretrainlab.bounds import (BoundParams, ce_bound, local_rad_fixed_point, local_rad_phi,
                                mae_bound, nn_covering_ln, ruhe_check, transferability_probe,
                                transformer_constants, tv_distance, verify_norm_growth,
                                verify_sa_contraction)
from pretrainlab.errors import ValidationError
from pretrainlab.models import MlpEncoder, init_sa_layer, init_transformer
from pretrainlab.rng import stream


class TestCovering:
    def test_hand_case(self):
        p = BoundParams(W=(1.0,), B=(1.0,), z_norm=1.0, m=math.sqrt(math.e / 2))
        assert nn_covering_ln(p, 1.0) == pytest.approx(1.0, rel=1e-12)

    def test_eps_scaling(self):
        p = BoundParams(W=(2.0, 1.5), B=(3.0, 1.0), m=8)
        assert nn_covering_ln(p, 2.0) == pytest.approx(nn_covering_ln(p, 1.0) / 4, rel=1e-12)

    def test_extra_unit_layer(self):
        one = BoundParams(W=(1.0,), B=(1.0,), m=5)
        two = BoundParams(W=(1.0, 1.0), B=(1.0, 1.0), m=5)
        assert nn_covering_ln(two, 1.0) == pytest.approx(8 * nn_covering_ln(one, 1.0))

    def test_main_sum_variant(self):
        p = BoundParams(W=(2.0, 1.0), B=(1.0, 1.0), m=5, sum_variant="main")
        assert nn_covering_ln(p, 1.0) == pytest.approx(math.log(50) * 4 * 1.5 ** 3)

    def test_bad_eps(self):
        with pytest.raises(ValidationError):
            nn_covering_ln(BoundParams(), 0.0)


class TestTransformerConstants:
    def test_residual_only(self):
        s, rho = transformer_constants(BoundParams(W=(2.0, 3.0), B=(1.0, 1.0), alpha1=0.0,
                                                   alpha2=0.0))
        assert s == [1.0, 1.0] and rho == [0.0, 0.0]

    def test_hand_case(self):
        s, _ = transformer_constants(BoundParams(W=(2.0,), B=(1.0,), alpha1=0.1, alpha2=0.1,
                                                 K=4))
        assert s[0] == pytest.approx(3.64, rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 5), min_size=1, max_size=5), st.floats(0, 2),
           st.floats(0, 2), st.floats(1, 8))
    def test_s_non_decreasing(self, Ws, a1, a2, K):
        s, _ = transformer_constants(BoundParams(W=tuple(Ws), B=tuple(Ws), alpha1=a1,
                                                 alpha2=a2, K=K))
        assert all(b >= a for a, b in zip(s, s[1:])) and s[0] >= 1

    def test_rho_hand_case_appendix(self):
        p = BoundParams(W=(2.0,), B=(3.0,), alpha1=0.5, alpha2=0.25, K=2, d=3, m=4, d_k=2,
                        x_star=1.5)
        _, rho = transformer_constants(p)
        w2, c2 = 4.0, 9.0
        first = 0.25 * (0.25 * w2 + 1) ** 2 * c2 * math.log(18) * (4 + 0.5 * w2 * 2.25 / 2)
        second = 0.0625 * w2 * c2 * (w2 + 0.25 * 4 * w2) * math.log(24)
        assert rho[0] == pytest.approx(first + second, rel=1e-12)

    def test_variants_differ(self):
        base = BoundParams(W=(2.0, 1.5), B=(3.0, 2.0), alpha1=0.5, alpha2=0.25, K=2, d=3, m=4,
                           d_k=2, x_star=1.5)
        main = dataclasses.replace(base, rho_variant="main")
        a, b = mae_bound(base), mae_bound(main)
        assert a.covering_constant != b.covering_constant
        assert transformer_constants(base)[0] == transformer_constants(main)[0]


class TestFixedPoint:
    def test_hand_case(self):
        r = local_rad_fixed_point(1, 1, 1, 100)
        assert r == pytest.approx(100 * 0.01 * math.log(4) ** 2, rel=1e-12)
        assert r == pytest.approx(1.92181, abs=1e-4)

    def test_clamp_branch_and_scaling(self):
        # (2/5)·sqrt(bN/(Hc)) = 0.4·sqrt(10) < e: clamped, r* = 100Hc/N
        assert local_rad_fixed_point(1, 1, 1, 10) == pytest.approx(10.0, rel=1e-12)
        assert local_rad_fixed_point(1, 1, 1e-3, 20) == pytest.approx(
            local_rad_fixed_point(1, 1, 1e-3, 10) / 2, rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(*[st.floats(1e-3, 1e3) for _ in range(3)], st.floats(1, 1e7))
    def test_fixed_point_residual(self, H, c, b, N):
        r = local_rad_fixed_point(H, c, b, N)
        assert abs(local_rad_phi(r, H, c, b, N) - r) / r < 1e-10

    def test_validation(self):
        with pytest.raises(ValidationError):
            local_rad_fixed_point(0, 1, 1, 1)


class TestBoundEvaluators:
    def test_ce_unit_instance(self):
        p = BoundParams(W=(1.0,), B=(1.0,), m=1, n=100, N=100, nu=0.5, tv=0.1, H=1, b=1,
                        R=1, G_phi=1, B_phi=1, C_beta=1, beta=0.5)
        d = ce_bound(p)
        c = 12 * math.log(2)
        assert d.covering_constant == pytest.approx(c)
        # (2/5)·sqrt(100/c) < e, so r* = 100c/100
        assert d.fixed_point == pytest.approx(c)
        assert d.complexity == pytest.approx(0.01)
        assert d.pretrain == pytest.approx(math.sqrt(c))
        assert d.confidence == pytest.approx(4 * math.sqrt(math.log(2) / 100))
        assert d.tv == pytest.approx(0.4)
        assert d.total == pytest.approx(0.01 + math.sqrt(c) + 0.4 * math.sqrt(math.log(2)) + 0.4)

    def test_mae_residual_baseline(self):
        p = BoundParams(W=(2.0,), B=(1.0,), K=3, x_sq_sum=12.0, n=4, alpha1=0, alpha2=0, nu=1)
        d = mae_bound(p)
        assert d.covering_constant == 0.0 and d.fixed_point == 0.0 and d.pretrain == 0.0
        assert d.complexity == pytest.approx(math.sqrt(3 * 12) / 4)
        assert d.confidence == 0.0

    def test_nu_one_zeroes_confidence(self):
        for f in (ce_bound, mae_bound):
            assert f(BoundParams(nu=1.0, alpha1=0.3, alpha2=0.3)).confidence == 0.0

    def test_n_scaling_of_pretrain_term(self):
        p = BoundParams(W=(1.0,), B=(1.0,), m=1, N=10)
        a = ce_bound(p).fixed_point
        b = ce_bound(dataclasses.replace(p, N=100)).fixed_point
        assert b == pytest.approx(a / 10, rel=1e-12)

    def test_as_dict_has_total(self):
        d = ce_bound(BoundParams()).as_dict()
        assert d["total"] == pytest.approx(d["complexity"] + d["pretrain"] + d["confidence"]
                                           + d["tv"])

    @pytest.mark.parametrize("bad", [dict(nu=0.0), dict(nu=1.5), dict(W=(1.0,), B=(1.0, 2.0)),
                                     dict(W=(0.0,), B=(1.0,)), dict(n=0), dict(tv=-1),
                                     dict(rho_variant="x")])
    def test_validation(self, bad):
        with pytest.raises(ValidationError):
            BoundParams(**bad)


@pytest.mark.parametrize("f", [ce_bound, mae_bound], ids=["ce", "mae"])
def test_monotone_sweeps(f):
    assert bound_sweep_violations(f) == []


def test_main_sum_variant_is_not_monotone_in_W():
    # documented: (Σ B/W)³ ∏W² = B³/W for a single layer
    p = BoundParams(W=(1.0,), B=(1.0,), sum_variant="main", m=4)
    assert ce_bound(dataclasses.replace(p, W=(2.0,))).covering_constant < \
        ce_bound(p).covering_constant


class TestTv:
    def test_cases(self):
        assert tv_distance([0.3, 0.7], [0.3, 0.7]) == 0.0
        assert tv_distance([1, 0], [0, 1]) == 1.0
        assert tv_distance([0.5, 0.5], [1, 0]) == 0.5

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 10))
    def test_metric_properties(self, seed, k):
        rng = np.random.default_rng(seed)
        p, q, r = (rng.dirichlet(np.ones(k)) for _ in range(3))
        d = tv_distance(p, q)
        assert 0 <= d <= 1 and d == tv_distance(q, p)
        assert tv_distance(p, r) <= d + tv_distance(q, r) + 1e-15
        # sup over events is attained on {p > q}
        assert d == pytest.approx(float(np.sum((p - q)[p > q])), abs=1e-15)

    def test_validation(self):
        with pytest.raises(ValidationError):
            tv_distance([0.5, 0.4], [0.5, 0.5])
        with pytest.raises(ValidationError):
            tv_distance([1.0], [0.5, 0.5])


class TestRuhe:
    def test_identity(self):
        r = ruhe_check(np.eye(2), np.eye(2))
        assert r.holds and r.lower == r.trace == r.upper == 2.0

    def test_diagonal_hand_case(self):
        r = ruhe_check(np.diag([2.0, 1.0]), np.diag([3.0, 1.0]))
        assert (r.lower, r.trace, r.upper) == pytest.approx((5.0, 7.0, 7.0))

    def test_random_pairs(self):
        rng = stream(0, "ruhe")
        for _ in range(100):
            a, b = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
            assert ruhe_check(a @ a.T, b @ b.T).holds

    def test_not_psd(self):
        with pytest.raises(ValidationError):
            ruhe_check(np.diag([1.0, -1.0]), np.eye(2))


class TestTransferability:
    def test_identical_encoders(self):
        enc = MlpEncoder((stream(0, "w").standard_normal((4, 3)),))
        x = stream(0, "x").standard_normal((100, 3))
        y = np.where(x[:, 0] > 0, 1.0, -1.0)
        r = transferability_probe(enc, enc, x, y, 5.0)
        assert abs(r.delta_ft) < 1e-9 and abs(r.delta_pt) < 1e-9
        assert np.max(np.abs(r.lambda_schur)) < 1e-9 and r.bound_ok

    def test_rotation(self):
        Q, _ = np.linalg.qr(stream(1, "q").standard_normal((4, 4)))
        h_hat, h_star, x, y, z = planted_family(0.0)
        r = transferability_probe(lambda a: h_star(a) @ Q.T, h_star, x, y, 5.0, targets=z)
        assert abs(r.delta_ft) < 1e-6 and np.max(np.abs(r.lambda_schur)) < 1e-9
        assert r.delta_pt < 1e-9

    def test_planted_sweep(self):
        ratios = []
        for t in np.geomspace(1e-3, 1.0, 10):
            h_hat, h_star, x, y, z = planted_family(float(t))
            r = transferability_probe(h_hat, h_star, x, y, 5.0, targets=z)
            assert r.delta_pt >= 0 and math.isfinite(r.ratio) and r.bound_ok
            assert r.ratio <= r.ceiling
            ratios.append(r.ratio)
        assert ratios[0] > 0

    def test_decoder_cap_flag(self):
        h_hat, h_star, x, y, z = planted_family(0.1)
        assert transferability_probe(h_hat, h_star, x, y, 5.0, targets=z,
                                     W_cap=1e-6).decoder_within_cap is False

    def test_shape_mismatch(self):
        x = np.ones((5, 3))
        with pytest.raises(ValidationError):
            transferability_probe(lambda a: a, lambda a: a[:, :2], x, np.ones(5), 1.0)


class TestSaVerifiers:
    def test_contraction_random_layers(self):
        for seed in range(10):
            layer = init_sa_layer(4, 3, 6, 0.5, 0.5, stream(seed, "l"))
            r = verify_sa_contraction(layer, trials=100, seed=seed)
            assert r.passed and r.violations == 0 and r.worst_ratio <= 1

    def test_residual_identity_ratio_one(self):
        layer = init_sa_layer(4, 3, 6, 0.0, 0.0, stream(0, "l"))
        r = verify_sa_contraction(layer, trials=5)
        assert r.constant == 1.0 and r.worst_ratio == pytest.approx(1.0, rel=1e-12)

    def test_contraction_can_fail_on_large_close_inputs(self):
        # The softmax weights depend on X, so the local Lipschitz constant grows
        # with ‖X‖; at input scale 30 nearby pairs exceed the constant.
        from pretrainlab.models import sa_forward

        worst = 0.0
        for seed in range(5):
            layer = init_sa_layer(4, 3, 6, 1.0, 1.0, stream(seed, "l"))
            W = layer.spectral_cap()
            const = (W * W + 1) * (4 * W + 1)
            rng = stream(seed, "pair")
            for _ in range(50):
                X = 30.0 * rng.standard_normal((4, 4))
                D = 1e-6 * rng.standard_normal((4, 4))
                ratio = (np.linalg.norm(sa_forward(layer, X + D) - sa_forward(layer, X))
                         / (const * np.linalg.norm(D)))
                worst = max(worst, ratio)
        assert worst > 1

    def test_norm_growth(self):
        rng = stream(0, "ng")
        for _ in range(100):
            enc = init_transformer(4, 6, 3, 8, 3, 0.5, 0.5, rng)
            r = verify_norm_growth(enc, rng.standard_normal((4, 6)))
            assert r.passed and np.all(np.diff(r.s) >= 0)
