import math

import numpy as np
import pytest

from ismaf import autodiff as ad
from ismaf.autodiff import ParamStore, Tensor
from ismaf.bridging import AttentionConfig, create_attention_params, create_fusion_attention_params, self_attention
from ismaf.fusion import (
    LossBreakdown,
    adaptive_fuse,
    breakdown_from_parts,
    ce_loss,
    classify,
    create_classifier_params,
    create_concat_fusion_params,
    create_fusion_params,
    fuse_alternate,
    overall_loss,
    predict_labels,
)

import oracles


def _rng(seed):
    return np.random.default_rng(seed)


def _fusion_store(d=4, seed=0):
    store = ParamStore(seed=seed)
    create_fusion_params(store, d)
    create_classifier_params(store, d)
    return store


class TestAdaptiveFuse:
    def test_perfect_reconstruction_gives_zero_loss(self):
        d = 3
        store = _fusion_store(d=d, seed=1)
        rng = _rng(2)
        z_tv, z_vt, r_g = (rng.normal(size=(1, d)) for _ in range(3))
        x = np.concatenate([z_tv, z_vt, r_g], axis=1)
        # Zero decoder weights with bias equal to x reproduce x exactly.
        store.assign("fuse.dec_w", np.zeros((d, 3 * d)))
        store.assign("fuse.dec_b", x[0])
        _, loss = adaptive_fuse(Tensor(z_tv), Tensor(z_vt), Tensor(r_g), store.constants())
        assert loss.item() == 0.0

    def test_zero_decoder_loss_is_squared_norm(self):
        d = 3
        store = _fusion_store(d=d, seed=3)
        store.assign("fuse.dec_w", np.zeros((d, 3 * d)))
        store.assign("fuse.dec_b", np.zeros(3 * d))
        rng = _rng(4)
        z_tv, z_vt, r_g = (rng.normal(size=(1, d)) for _ in range(3))
        x = np.concatenate([z_tv, z_vt, r_g], axis=1)
        _, loss = adaptive_fuse(Tensor(z_tv), Tensor(z_vt), Tensor(r_g), store.constants())
        assert loss.item() == pytest.approx(float((x * x).sum()), abs=1e-12)

    def test_against_direct_formula_oracle(self):
        d, n = 3, 4
        store = _fusion_store(d=d, seed=5)
        rng = _rng(6)
        z_tv, z_vt, r_g = (rng.normal(size=(n, d)) for _ in range(3))
        x_fuse, loss = adaptive_fuse(Tensor(z_tv), Tensor(z_vt), Tensor(r_g), store.constants())
        x = np.concatenate([z_tv, z_vt, r_g], axis=1)
        fuse_exp = np.tanh(x @ store.value("fuse.enc_w") + store.value("fuse.enc_b"))
        x_hat = fuse_exp @ store.value("fuse.dec_w") + store.value("fuse.dec_b")
        loss_exp = float(((x_hat - x) ** 2).sum()) / n
        assert np.abs(x_fuse.data - fuse_exp).max() < 1e-10
        assert loss.item() == pytest.approx(loss_exp, abs=1e-10)

    def test_loss_non_negative(self):
        d = 3
        store = _fusion_store(d=d, seed=7)
        rng = _rng(8)
        for _ in range(5):
            args = (Tensor(rng.normal(size=(2, d))) for _ in range(3))
            _, loss = adaptive_fuse(*args, store.constants())
            assert loss.item() >= 0.0

    def test_bottleneck_feeds_classifier_shape(self):
        d = 5
        store = _fusion_store(d=d, seed=9)
        rng = _rng(10)
        x_fuse, _ = adaptive_fuse(
            Tensor(rng.normal(size=(3, d))), Tensor(rng.normal(size=(3, d))),
            Tensor(rng.normal(size=(3, d))), store.constants(),
        )
        assert x_fuse.shape == (3, d)

    def test_dimension_mismatch_rejected(self):
        store = _fusion_store(d=3, seed=11)
        with pytest.raises(ad.ShapeError):
            adaptive_fuse(
                Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))),
                Tensor(np.zeros((2, 3))), store.constants(),
            )

    def test_grad_check(self):
        d = 3
        store = _fusion_store(d=d, seed=12)
        store.create("z_tv", (2, d))
        store.create("z_vt", (2, d))
        store.create("r_g", (2, d))

        def loss(params):
            _, l_af = adaptive_fuse(params["z_tv"], params["z_vt"], params["r_g"], params)
            return l_af

        assert ad.grad_check(loss, store) < 1e-4


class TestClassify:
    def test_zero_logits_give_half(self):
        store = _fusion_store(d=4, seed=13)
        store.assign("clf.w", np.zeros((4, 2)))
        probs = classify(Tensor(_rng(14).normal(size=(3, 4))), store.constants())
        np.testing.assert_allclose(probs.data, 0.5)

    def test_logit_gap_closed_form(self):
        store = _fusion_store(d=2, seed=15)
        store.assign("clf.w", np.eye(2))
        probs = classify(Tensor([[0.0, math.log(9.0)]]), store.constants())
        assert probs.data[0, 1] == pytest.approx(0.9, abs=1e-12)

    def test_against_softmax_oracle(self):
        store = _fusion_store(d=4, seed=16)
        x = _rng(17).normal(size=(5, 4))
        probs = classify(Tensor(x), store.constants())
        expected = oracles.softmax_direct(x @ store.value("clf.w") + store.value("clf.b"))
        assert np.abs(probs.data - expected).max() < 1e-12

    def test_valid_distribution(self):
        store = _fusion_store(d=4, seed=18)
        probs = classify(Tensor(_rng(19).normal(size=(6, 4)) * 10), store.constants())
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-9)
        assert (probs.data >= 0).all()

    def test_prediction_argmax_with_tie_to_zero(self):
        probs = np.array([[0.5, 0.5], [0.4, 0.6], [0.7, 0.3]])
        np.testing.assert_array_equal(predict_labels(probs), [0, 1, 0])

    def test_prediction_invariant_to_logit_shift(self):
        store = _fusion_store(d=2, seed=20)
        store.assign("clf.w", np.eye(2))
        logits = _rng(21).normal(size=(4, 2))
        base = predict_labels(classify(Tensor(logits), store.constants()).data)
        shifted = predict_labels(classify(Tensor(logits + 3.7), store.constants()).data)
        np.testing.assert_array_equal(base, shifted)


class TestCeLoss:
    def test_confident_correct_is_zero(self):
        assert ce_loss(Tensor([1.0]), [1]).item() == pytest.approx(0.0, abs=1e-9)

    def test_half_probability_is_log2(self):
        for label in (0, 1):
            assert ce_loss(Tensor([0.5]), [label]).item() == pytest.approx(
                math.log(2.0), abs=1e-12
            )

    def test_batch_against_scalar_loop(self):
        rng = _rng(22)
        y_hat = rng.uniform(0.05, 0.95, size=4)
        labels = [0, 1, 1, 0]
        expected = -sum(
            y * math.log(p) + (1 - y) * math.log(1 - p) for p, y in zip(y_hat, labels)
        ) / 4
        assert ce_loss(Tensor(y_hat), labels).item() == pytest.approx(expected, abs=1e-10)

    def test_non_negative(self):
        rng = _rng(23)
        y_hat = rng.uniform(0.01, 0.99, size=6)
        labels = rng.integers(0, 2, size=6)
        assert ce_loss(Tensor(y_hat), labels).item() >= 0.0

    def test_bad_labels_rejected(self):
        with pytest.raises(ValueError, match="labels"):
            ce_loss(Tensor([0.5]), [2])

    def test_grad_check(self):
        store = ParamStore(seed=24)
        store.create("logits", (4, 2))
        labels = [0, 1, 1, 0]

        def loss(params):
            probs = ad.softmax_rows(params["logits"])
            y_hat = ad.reshape(ad.slice_rows(ad.transpose(probs), 1, 2), (4,))
            return ce_loss(y_hat, labels)

        assert ad.grad_check(loss, store) < 1e-4


class TestOverallLoss:
    def test_zero_lambdas_reduce_to_ce_exactly(self):
        parts = [Tensor(float(x)) for x in (0.731, 1.2, 3.4, 0.9, 2.2)]
        total = overall_loss(*parts, lambdas=(0, 0, 0, 0))
        assert total.item() == parts[0].item()

    def test_unit_parts_reference_weights(self):
        # All components at 1 with weights (0.3, 0.7, 0.4, 0.4) total 2.8.
        ones = [Tensor(1.0) for _ in range(5)]
        total = overall_loss(*ones, lambdas=(0.3, 0.7, 0.4, 0.4))
        assert total.item() == pytest.approx(2.8, abs=1e-12)

    def test_against_direct_weighted_sum(self):
        rng = _rng(25)
        vals = rng.uniform(0, 2, size=5)
        lambdas = tuple(rng.uniform(0, 1, size=4))
        total = overall_loss(*[Tensor(v) for v in vals], lambdas=lambdas)
        expected = vals[0] + sum(l * v for l, v in zip(lambdas, vals[1:]))
        assert total.item() == pytest.approx(expected, abs=1e-12)

    def test_linear_in_each_lambda(self):
        vals = [Tensor(v) for v in (0.5, 1.1, 0.7, 0.3, 2.0)]
        for idx in range(4):
            lam_lo = [0.2] * 4
            lam_hi = list(lam_lo)
            lam_hi[idx] += 0.5
            lo = overall_loss(*vals, lambdas=lam_lo).item()
            hi = overall_loss(*vals, lambdas=lam_hi).item()
            slope = (hi - lo) / 0.5
            assert slope == pytest.approx(vals[idx + 1].item(), abs=1e-9)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            overall_loss(Tensor(1.0), None, None, None, None, lambdas=(-0.1, 0, 0, 0))

    def test_none_components_count_as_zero(self):
        total = overall_loss(Tensor(0.4), None, None, None, None, lambdas=(0.3, 0.7, 0.4, 0.4))
        assert total.item() == 0.4

    def test_breakdown_invariant(self):
        bd = breakdown_from_parts(
            Tensor(0.5), Tensor(1.0), Tensor(2.0), Tensor(3.0), Tensor(4.0),
            overall_loss(Tensor(0.5), Tensor(1.0), Tensor(2.0), Tensor(3.0), Tensor(4.0),
                         lambdas=(0.3, 0.7, 0.4, 0.4)),
            (0.3, 0.7, 0.4, 0.4),
        )
        assert bd.total == pytest.approx(0.5 + 0.3 + 1.4 + 1.2 + 1.6, abs=1e-12)

    def test_breakdown_rejects_inconsistent_total(self):
        with pytest.raises(ValueError, match="weighted sum"):
            LossBreakdown(1.0, 1.0, 1.0, 1.0, 1.0, 99.0, (0.3, 0.7, 0.4, 0.4)).check()


class TestFuseAlternate:
    def test_is_concat_identity_halves_recover_input(self):
        d = 3
        store = ParamStore(seed=26)
        create_concat_fusion_params(store, d)
        store.assign("fuse.cat_w", np.vstack([np.eye(d), np.eye(d)]) / 2.0)
        store.assign("fuse.cat_b", np.zeros(d))
        x = _rng(27).normal(size=(2, d))
        cfg = AttentionConfig(d=d, heads=1, token_len=1)
        out = fuse_alternate("is-concat", Tensor(x), Tensor(x), store.constants(), cfg)
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_is_concat_against_matmul_oracle(self):
        d = 4
        store = ParamStore(seed=28)
        create_concat_fusion_params(store, d)
        rng = _rng(29)
        z, g = rng.normal(size=(3, d)), rng.normal(size=(3, d))
        cfg = AttentionConfig(d=d, heads=2, token_len=2)
        out = fuse_alternate("is-concat", Tensor(z), Tensor(g), store.constants(), cfg)
        expected = np.concatenate([z, g], axis=1) @ store.value("fuse.cat_w") + store.value("fuse.cat_b")
        assert np.abs(out.data - expected).max() < 1e-12

    def test_is_att_equal_inputs_shared_params_match_self_attention(self):
        cfg = AttentionConfig(d=6, heads=2, token_len=3)
        store = ParamStore(seed=30)
        create_attention_params(store, cfg)
        params = store.constants()
        # Route the fusion attention through the T projections.
        params["attn.F.wq"] = params["attn.T.wq"]
        params["attn.F.wk"] = params["attn.T.wk"]
        params["attn.F.wv"] = params["attn.T.wv"]
        params["attn.F.wo"] = params["attn.T.wo"]
        x = _rng(31).normal(size=6)
        fused = fuse_alternate("is-att", Tensor(x[None, :]), Tensor(x[None, :]), params, cfg)
        direct = self_attention(Tensor(x), "T", params, cfg)
        np.testing.assert_allclose(fused.data[0], direct.data, atol=1e-12)

    def test_is_att_output_shape(self):
        cfg = AttentionConfig(d=6, heads=2, token_len=2)
        store = ParamStore(seed=32)
        create_fusion_attention_params(store, cfg)
        rng = _rng(33)
        out = fuse_alternate(
            "is-att", Tensor(rng.normal(size=(3, 6))), Tensor(rng.normal(size=(3, 6))),
            store.constants(), cfg,
        )
        assert out.shape == (3, 6)

    def test_unknown_kind_rejected(self):
        cfg = AttentionConfig(d=4, heads=1, token_len=1)
        with pytest.raises(ValueError, match="unknown fusion kind"):
            fuse_alternate("is-co", Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))), {}, cfg)
