import math

import numpy as np
import pytest

from ecgot import model
from ecgot.errors import (
    DivergedTraining,
    InvalidArgument,
    NonFiniteActivation,
)
from ecgot.model import ModelConfig, TrainConfig

TINY = ModelConfig(
    feature_len=24,
    seq_len=4,
    d_model=8,
    n_layers=1,
    n_heads=2,
    d_k=4,
    d_v=4,
    d_ff=16,
    n_classes=3,
    dropout=0.0,
    conv_kernel=3,
    conv_channels=4,
)


def tiny_batch(seed=0, n=6, config=TINY):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, config.feature_len))
    y = rng.integers(0, config.n_classes, size=n)
    return x, y


class TestPositionalEncoding:
    def test_position_zero(self):
        pe = model.positional_encoding(4, 8)
        np.testing.assert_allclose(pe[0, 0::2], 0.0, atol=1e-15)
        np.testing.assert_allclose(pe[0, 1::2], 1.0, atol=1e-15)

    def test_direct_evaluation_d2(self):
        pe = model.positional_encoding(2, 2)
        assert pe[1, 0] == pytest.approx(math.sin(1.0))
        assert pe[1, 1] == pytest.approx(math.cos(1.0))

    def test_formula_general(self):
        pe = model.positional_encoding(5, 6)
        for pos in range(5):
            for i in range(3):
                angle = pos / 10000 ** (2 * i / 6)
                assert pe[pos, 2 * i] == pytest.approx(math.sin(angle))
                assert pe[pos, 2 * i + 1] == pytest.approx(math.cos(angle))

    def test_odd_d_model_rejected(self):
        with pytest.raises(InvalidArgument):
            model.positional_encoding(4, 7)


class TestScaledDotAttention:
    def test_single_query_equals_value(self):
        q = np.array([[1.0, 2.0]])
        v = np.array([[5.0, -1.0, 3.0]])
        out = model.scaled_dot_attention(q, q, v)
        np.testing.assert_allclose(out, v, atol=1e-12)

    def test_saturated_softmax_selects_row(self):
        k = np.eye(3)
        v = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
        q = 1e4 * k[1][None, :]
        out = model.scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(out[0], v[1], atol=1e-9)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(3, 4))
        k = rng.normal(size=(3, 4))
        v = rng.normal(size=(3, 5))
        scores = q @ k.T / math.sqrt(4)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights = e / e.sum(axis=1, keepdims=True)
        expected = weights @ v
        np.testing.assert_allclose(model.scaled_dot_attention(q, k, v), expected, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            model.scaled_dot_attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 2)))

    def test_attention_weights_row_stochastic(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 5, 8))
        w_q = rng.normal(size=(2, 8, 4))
        w_k = rng.normal(size=(2, 8, 4))
        w_v = rng.normal(size=(2, 8, 4))
        w_o = rng.normal(size=(8, 8))
        _, cache = model._mha_forward(x, w_q, w_k, w_v, w_o)
        attn = cache[4]
        assert (attn >= 0).all()
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-6)


class TestMultiHeadAttention:
    def test_identity_projection_reduces_to_attention(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 6))
        lp = {
            "w_q": np.eye(6)[None],
            "w_k": np.eye(6)[None],
            "w_v": np.eye(6)[None],
            "w_o": np.eye(6),
        }
        out = model.multi_head_attention(x, lp)
        np.testing.assert_allclose(out, model.scaled_dot_attention(x, x, x), atol=1e-12)

    def test_zero_input_zero_output(self):
        rng = np.random.default_rng(6)
        lp = {
            "w_q": rng.normal(size=(2, 6, 3)),
            "w_k": rng.normal(size=(2, 6, 3)),
            "w_v": rng.normal(size=(2, 6, 3)),
            "w_o": rng.normal(size=(6, 6)),
        }
        out = model.multi_head_attention(np.zeros((4, 6)), lp)
        np.testing.assert_allclose(out, 0.0, atol=1e-15)

    def test_matches_head_by_head_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 8))
        h, dk = 2, 4
        w_q = rng.normal(size=(h, 8, dk))
        w_k = rng.normal(size=(h, 8, dk))
        w_v = rng.normal(size=(h, 8, dk))
        w_o = rng.normal(size=(h * dk, 8))
        heads = [
            model.scaled_dot_attention(x @ w_q[i], x @ w_k[i], x @ w_v[i])
            for i in range(h)
        ]
        expected = np.concatenate(heads, axis=1) @ w_o
        got = model.multi_head_attention(
            x, {"w_q": w_q, "w_k": w_k, "w_v": w_v, "w_o": w_o}
        )
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestEncoderLayer:
    def _layer_params(self, d, rng, zero_sublayers=False):
        scale = 0.0 if zero_sublayers else 1.0
        return {
            "w_q": scale * rng.normal(size=(2, d, d // 2)),
            "w_k": scale * rng.normal(size=(2, d, d // 2)),
            "w_v": scale * rng.normal(size=(2, d, d // 2)),
            "w_o": scale * rng.normal(size=(d, d)),
            "ln1_g": np.ones(d),
            "ln1_b": np.zeros(d),
            "ffn_w1": scale * rng.normal(size=(d, 2 * d)),
            "ffn_b1": np.zeros(2 * d),
            "ffn_w2": scale * rng.normal(size=(2 * d, d)),
            "ffn_b2": np.zeros(d),
            "ln2_g": np.ones(d),
            "ln2_b": np.zeros(d),
        }

    def test_layernorm_constant_row_gives_bias(self):
        out, _ = model._layer_norm_forward(
            np.full((1, 4), 3.0), np.ones(4), np.full(4, 0.25)
        )
        np.testing.assert_allclose(out, 0.25, atol=1e-9)

    def test_zero_sublayers_is_double_layernorm(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 6))
        lp = self._layer_params(6, rng, zero_sublayers=True)
        out = model.encoder_layer(x, lp)
        once, _ = model._layer_norm_forward(x, lp["ln1_g"], lp["ln1_b"])
        twice, _ = model._layer_norm_forward(once, lp["ln2_g"], lp["ln2_b"])
        np.testing.assert_allclose(out, twice, atol=1e-12)

    def test_normalization_statistics(self):
        rng = np.random.default_rng(9)
        x = rng.normal(scale=10.0, size=(4, 32))
        lp = self._layer_params(32, rng)
        lp["ln2_g"] = np.full(32, 2.0)
        lp["ln2_b"] = np.full(32, 0.5)
        out = model.encoder_layer(x, lp)
        np.testing.assert_allclose(out.mean(axis=-1), 0.5, atol=1e-6)
        np.testing.assert_allclose(out.std(axis=-1), 2.0, atol=1e-4)

    def test_non_finite_raises_with_layer_index(self):
        rng = np.random.default_rng(10)
        lp = self._layer_params(6, rng)
        lp["w_o"] = np.full((6, 6), np.inf)
        with pytest.raises(NonFiniteActivation) as err:
            model.encoder_layer(rng.normal(size=(3, 6)), lp, layer_index=3)
        assert err.value.layer_index == 3


class TestForward:
    def test_probability_rows(self):
        x, _ = tiny_batch()
        params = model.init_params(TINY, seed=1)
        probs = model.forward(x, params, TINY)
        assert probs.shape == (6, 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert (probs > 0).all() and (probs < 1).all()

    def test_identical_inputs_identical_rows(self):
        x, _ = tiny_batch()
        x[1] = x[0]
        params = model.init_params(TINY, seed=1)
        probs = model.forward(x, params, TINY)
        np.testing.assert_array_equal(probs[0], probs[1])

    def test_batch_permutation_equivariance(self):
        x, _ = tiny_batch()
        params = model.init_params(TINY, seed=2)
        perm = np.array([3, 1, 4, 0, 5, 2])
        probs = model.forward(x, params, TINY)
        probs_perm = model.forward(x[perm], params, TINY)
        np.testing.assert_allclose(probs_perm, probs[perm], atol=1e-12)

    def test_token_position_sensitivity(self):
        # positional encoding must make token order matter
        x, _ = tiny_batch(seed=11)
        params = model.init_params(TINY, seed=3)
        tokens = x.reshape(6, TINY.seq_len, TINY.token_width)
        perm = np.array([2, 0, 3, 1])
        x_perm = tokens[:, perm, :].reshape(6, TINY.feature_len)
        probs = model.forward(x, params, TINY)
        probs_perm = model.forward(x_perm, params, TINY)
        assert np.abs(probs - probs_perm).max() > 1e-8

    def test_wrong_feature_length(self):
        params = model.init_params(TINY, seed=1)
        with pytest.raises(InvalidArgument):
            model.forward(np.zeros((2, 25)), params, TINY)


class TestLossAndGradients:
    def test_uniform_probabilities_loss_ln_k(self):
        x, y = tiny_batch()
        params = model.init_params(TINY, seed=4)
        params["out_w"] = np.zeros_like(params["out_w"])
        params["out_b"] = np.zeros_like(params["out_b"])
        loss, _ = model.loss_and_gradients(x, y, params, TINY)
        assert loss == pytest.approx(math.log(3), abs=1e-9)

    def test_perfect_prediction_loss_near_zero(self):
        x, y = tiny_batch()
        params = model.init_params(TINY, seed=4)
        params["out_w"] = np.zeros_like(params["out_w"])
        for klass in range(TINY.n_classes):
            params["out_b"] = np.full(TINY.n_classes, -50.0)
            params["out_b"][klass] = 50.0
            loss, _ = model.loss_and_gradients(
                x, np.full(len(x), klass), params, TINY
            )
            assert loss < 1e-9

    def test_gradient_check_every_tensor(self):
        x, y = tiny_batch(seed=12, n=4)
        params = model.init_params(TINY, seed=5)
        errors = model.gradient_check(x, y, params, TINY, step=1e-4)
        for name, err in errors.items():
            assert err <= 1e-4, f"{name}: {err}"

    def test_labels_out_of_range(self):
        x, _ = tiny_batch()
        params = model.init_params(TINY, seed=4)
        with pytest.raises(InvalidArgument):
            model.loss_and_gradients(x, np.array([0, 1, 2, 3, 0, 1]), params, TINY)


class TestShapeAudit:
    def test_default_config_passes(self):
        config = ModelConfig()
        params = model.init_params(config, seed=0)
        model.audit_shapes(params, config)

    def test_projection_shapes_match_contract(self):
        config = ModelConfig()
        params = model.init_params(config, seed=0)
        for i in range(config.n_layers):
            assert params[f"layers.{i}.w_q"].shape == (
                config.n_heads,
                config.d_model,
                config.d_k,
            )
            assert params[f"layers.{i}.w_o"].shape == (
                config.n_heads * config.d_v,
                config.d_model,
            )

    def test_bad_shape_rejected(self):
        config = ModelConfig()
        params = model.init_params(config, seed=0)
        params["layers.0.w_q"] = params["layers.0.w_q"][:, :, :-1]
        with pytest.raises(InvalidArgument):
            model.audit_shapes(params, config)

    def test_missing_tensor_rejected(self):
        config = ModelConfig()
        params = model.init_params(config, seed=0)
        del params["emb_b"]
        with pytest.raises(InvalidArgument):
            model.audit_shapes(params, config)

    def test_invalid_config_combinations(self):
        with pytest.raises(InvalidArgument):
            ModelConfig(d_model=64, n_heads=4, d_k=15)
        with pytest.raises(InvalidArgument):
            ModelConfig(feature_len=672, seq_len=29)


class TestTrain:
    def _separable_data(self, n_per_class=40, seed=13):
        rng = np.random.default_rng(seed)
        centers = rng.normal(scale=3.0, size=(3, TINY.feature_len))
        x = np.concatenate(
            [centers[c] + 0.3 * rng.normal(size=(n_per_class, TINY.feature_len)) for c in range(3)]
        )
        y = np.repeat(np.arange(3), n_per_class)
        return x, y

    def test_learns_separable_classes(self):
        x, y = self._separable_data()
        tc = TrainConfig(learning_rate=3e-3, batch_size=32, epochs=25, seed=1, val_fraction=0.1)
        params, log = model.train(x, y, TINY, tc)
        acc = model.evaluate_accuracy(x, y, params, TINY)
        assert acc >= 0.95
        assert len(log) == 25

    def test_zero_learning_rate_freezes_params(self):
        x, y = self._separable_data(n_per_class=20)
        tc = TrainConfig(learning_rate=0.0, batch_size=16, epochs=3, seed=2, val_fraction=0.1)
        params, log = model.train(x, y, TINY, tc)
        reference = model.init_params(TINY, seed=2)
        for name in reference:
            np.testing.assert_array_equal(params[name], reference[name])
        losses = [row[1] for row in log]
        assert max(losses) - min(losses) <= 1e-12

    def test_same_seed_identical_logs(self):
        x, y = self._separable_data(n_per_class=15)
        tc = TrainConfig(learning_rate=1e-3, batch_size=16, epochs=4, seed=3)
        _, log_a = model.train(x, y, TINY, tc)
        _, log_b = model.train(x, y, TINY, tc)
        assert log_a == log_b

    def test_divergence_aborts(self):
        x, y = self._separable_data(n_per_class=10)
        tc = TrainConfig(learning_rate=1e6, batch_size=16, epochs=5, seed=4)
        with pytest.raises(DivergedTraining) as err:
            model.train(x, y, TINY, tc)
        assert isinstance(err.value.log, list)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = model.init_params(TINY, seed=6)
        path = tmp_path / "ck.bin"
        model.save_checkpoint(path, params, TINY, meta={"strategy": "none", "seed": 6})
        loaded, config, meta = model.load_checkpoint(path)
        assert meta == {"strategy": "none", "seed": 6}
        assert config == TINY
        assert set(loaded) == set(params)
        for name in params:
            np.testing.assert_allclose(
                loaded[name], params[name].astype(np.float32), atol=0
            )

    def test_reject_garbage(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(InvalidArgument):
            model.load_checkpoint(path)

    def test_forward_stable_through_roundtrip(self, tmp_path):
        x, _ = tiny_batch(seed=20)
        params = model.init_params(TINY, seed=7)
        path = tmp_path / "ck.bin"
        model.save_checkpoint(path, params, TINY, meta={})
        loaded, config, _ = model.load_checkpoint(path)
        a = model.forward(x, loaded, config)
        model.save_checkpoint(path, loaded, config, meta={})
        again, _, _ = model.load_checkpoint(path)
        b = model.forward(x, again, config)
        np.testing.assert_array_equal(a, b)
