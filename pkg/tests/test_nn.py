import math

import numpy as np
import pytest

from modalbridge import nn


def dense(i, o, act="identity"):
    return nn.LayerSpec("dense", i, o, activation=act)


def random_weights(spec, seed):
    return nn.init_weights(spec, seed)


def straight_line_oracle(spec, weights, x):
    """Independent forward: plain matrix algebra, no shared code paths."""
    a = np.asarray(x, dtype=float)
    for layer, blk in zip(spec.layers, weights.blocks):
        if layer.kind == "dense":
            z = blk["w"] @ a + blk["b"]
        elif layer.kind == "conv1d":
            xp = np.concatenate([np.zeros(layer.padding), a, np.zeros(layer.padding)])
            z = np.array(
                [
                    blk["b"][0]
                    + sum(
                        blk["w"][j] * xp[o * layer.stride + j]
                        for j in range(layer.kernel_size)
                    )
                    for o in range(layer.out_len)
                ]
            )
        else:
            full = np.zeros((layer.in_len - 1) * layer.stride + layer.kernel_size)
            for i in range(layer.in_len):
                for j in range(layer.kernel_size):
                    full[i * layer.stride + j] += blk["w"][j] * a[i]
            z = full[layer.padding : layer.padding + layer.out_len] + blk["b"][0]
        if layer.activation == "relu":
            a = np.maximum(z, 0)
        elif layer.activation == "tanh":
            a = np.tanh(z)
        else:
            a = z
    return a


class TestForward:
    def test_identity_dense(self):
        spec = nn.NetworkSpec((dense(3, 3),))
        w = nn.NetworkWeights([{"w": np.eye(3), "b": np.zeros(3)}])
        y, _ = nn.forward(spec, w, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(y, [1.0, 2.0, 3.0])

    def test_hand_computed_relu(self):
        spec = nn.NetworkSpec((dense(1, 1, "relu"),))
        w = nn.NetworkWeights([{"w": np.array([[2.0]]), "b": np.array([1.0])}])
        y, _ = nn.forward(spec, w, [3.0])
        assert y[0] == 7.0

    def test_three_layer_vs_oracle(self):
        spec = nn.NetworkSpec(
            (dense(8, 6, "relu"), dense(6, 5, "tanh"), dense(5, 3))
        )
        for seed in range(5):
            w = random_weights(spec, seed)
            x = np.random.default_rng(100 + seed).normal(size=8)
            y, _ = nn.forward(spec, w, x)
            np.testing.assert_allclose(y, straight_line_oracle(spec, w, x), atol=1e-12)

    def test_conv_network_vs_oracle(self):
        enc = nn.conv_layer(40, 10, "relu")
        dec = nn.mirror_layer(enc, "identity")
        spec = nn.NetworkSpec((enc, dec))
        w = random_weights(spec, 3)
        x = np.random.default_rng(42).normal(size=40)
        y, _ = nn.forward(spec, w, x)
        np.testing.assert_allclose(y, straight_line_oracle(spec, w, x), atol=1e-12)

    def test_shape_mismatch_names_problem(self):
        spec = nn.NetworkSpec((dense(3, 2),))
        w = nn.NetworkWeights([{"w": np.zeros((2, 3)), "b": np.zeros(2)}])
        with pytest.raises(nn.ConfigError):
            nn.forward(spec, w, [1.0, 2.0])
        bad = nn.NetworkWeights([{"w": np.zeros((3, 3)), "b": np.zeros(2)}])
        with pytest.raises(nn.ConfigError, match="layer 0"):
            nn.forward(spec, bad, [1.0, 2.0, 3.0])

    def test_forward_is_pure(self):
        spec = nn.NetworkSpec((dense(4, 4, "tanh"), dense(4, 2)))
        w = random_weights(spec, 0)
        x = np.random.default_rng(1).normal(size=4)
        y1, _ = nn.forward(spec, w, x)
        y2, _ = nn.forward(spec, w, x)
        np.testing.assert_array_equal(y1, y2)

    def test_conv_kernel1_identity(self):
        layer = nn.LayerSpec("conv1d", 7, 7, kernel_size=1, stride=1, padding=0)
        spec = nn.NetworkSpec((layer,))
        w = nn.NetworkWeights([{"w": np.array([1.0]), "b": np.zeros(1)}])
        x = np.random.default_rng(5).normal(size=7)
        y, _ = nn.forward(spec, w, x)
        np.testing.assert_allclose(y, x, atol=0)


class TestLoss:
    def test_mse_zero(self):
        assert nn.loss("mse", [1.0, 1.0], [1.0, 1.0]) == 0.0

    def test_mse_hand(self):
        assert nn.loss("mse", [0.0], [2.0]) == 4.0

    def test_bce_ln2(self):
        assert abs(nn.loss("bce", [0.5], [1.0]) - math.log(2.0)) < 1e-12

    @pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
    def test_bce_self_is_binary_entropy(self, p):
        expect = -(p * math.log(p) + (1 - p) * math.log(1 - p))
        assert abs(nn.loss("bce", [p], [p]) - expect) < 1e-9

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            nn.loss("mse", [1.0], [1.0, 2.0])

    def test_bce_target_out_of_range(self):
        with pytest.raises(ValueError):
            nn.loss("bce", [0.5], [1.5])

    def test_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            p = rng.uniform(0, 1, size=6)
            t = rng.uniform(0, 1, size=6)
            assert nn.loss("mse", p, t) >= 0
            assert nn.loss("bce", p, t) >= 0


class TestBackward:
    def test_all_zero(self):
        spec = nn.NetworkSpec((dense(3, 3),))
        w = nn.NetworkWeights([{"w": np.zeros((3, 3)), "b": np.zeros(3)}])
        _, cache = nn.forward(spec, w, np.zeros(3))
        grads, dx = nn.backward(spec, w, cache, "mse", np.zeros(3))
        assert np.all(grads[0]["w"] == 0)
        assert np.all(grads[0]["b"] == 0)
        assert np.all(dx == 0)

    def test_dense_closed_form(self):
        # dL/dW = 2 (Wx + b - t) x^T / len for a single identity-activation layer
        rng = np.random.default_rng(2)
        spec = nn.NetworkSpec((dense(4, 3),))
        w = random_weights(spec, 2)
        x = rng.normal(size=4)
        t = rng.normal(size=3)
        y, cache = nn.forward(spec, w, x)
        grads, dx = nn.backward(spec, w, cache, "mse", t)
        resid = 2.0 * (y - t) / 3.0
        np.testing.assert_allclose(grads[0]["w"], np.outer(resid, x), atol=1e-14)
        np.testing.assert_allclose(grads[0]["b"], resid, atol=1e-14)
        np.testing.assert_allclose(dx, w.blocks[0]["w"].T @ resid, atol=1e-14)

    def test_three_layer_finite_difference(self):
        spec = nn.NetworkSpec(
            (dense(6, 5, "relu"), dense(5, 4, "tanh"), dense(4, 3))
        )
        w = random_weights(spec, 7)
        rng = np.random.default_rng(7)
        x = rng.normal(size=6)
        t = rng.normal(size=3)
        res = nn.gradient_check(spec, w, x, t, "mse", eps=1e-5)
        assert res.max_rel_error < 1e-4
        assert res.n_checked > 0

    def test_stale_cache_rejected(self):
        spec = nn.NetworkSpec((dense(2, 2),))
        w = random_weights(spec, 0)
        _, cache = nn.forward(spec, w, np.ones(2))
        state = nn.OptimizerState(0.1)
        grads, _ = nn.backward(spec, w, cache, "mse", np.zeros(2))
        nn.optimizer_step(w, grads, state)
        with pytest.raises(nn.ConfigError, match="stale"):
            nn.backward(spec, w, cache, "mse", np.zeros(2))

    def test_input_gradient_chains(self):
        # d(loss)/dx via backward equals finite differences on the input
        spec = nn.NetworkSpec((dense(4, 3, "tanh"), dense(3, 2)))
        w = random_weights(spec, 9)
        rng = np.random.default_rng(9)
        x = rng.normal(size=4)
        t = rng.normal(size=2)
        _, cache = nn.forward(spec, w, x)
        _, dx = nn.backward(spec, w, cache, "mse", t)
        eps = 1e-6
        for i in range(4):
            xp = x.copy()
            xp[i] += eps
            lp = nn.loss("mse", nn.forward(spec, w, xp)[0], t)
            xp[i] -= 2 * eps
            lm = nn.loss("mse", nn.forward(spec, w, xp)[0], t)
            fd = (lp - lm) / (2 * eps)
            assert abs(fd - dx[i]) < 1e-6 * max(1.0, abs(fd))


class TestOptimizer:
    def test_zero_gradient_fixed_point(self):
        spec = nn.NetworkSpec((dense(2, 2),))
        w = random_weights(spec, 1)
        before = w.copy()
        zero = [{"w": np.zeros((2, 2)), "b": np.zeros(2)}]
        nn.optimizer_step(w, zero, nn.OptimizerState(0.5))
        np.testing.assert_array_equal(w.blocks[0]["w"], before.blocks[0]["w"])

    def test_hand_computed_step(self):
        w = nn.NetworkWeights([{"w": np.array([1.0]), "b": np.array([0.0])}])
        g = [{"w": np.array([2.0]), "b": np.array([0.0])}]
        nn.optimizer_step(w, g, nn.OptimizerState(0.1, momentum=0.0))
        assert w.blocks[0]["w"][0] == pytest.approx(0.8, abs=1e-15)

    def test_step_bound(self):
        # one step moves no parameter by more than lr * ||g||_inf
        spec = nn.NetworkSpec((dense(3, 3),))
        w = random_weights(spec, 4)
        before = w.copy()
        rng = np.random.default_rng(4)
        g = [{"w": rng.normal(size=(3, 3)), "b": rng.normal(size=3)}]
        lr = 1e-6
        ginf = max(np.abs(g[0]["w"]).max(), np.abs(g[0]["b"]).max())
        nn.optimizer_step(w, g, nn.OptimizerState(lr))
        delta = np.abs(w.blocks[0]["w"] - before.blocks[0]["w"]).max()
        assert delta <= lr * ginf + 1e-18

    def test_determinism_100_steps(self):
        def run():
            spec = nn.NetworkSpec((dense(5, 4, "relu"), dense(4, 5)))
            w = random_weights(spec, 12)
            state = nn.OptimizerState(0.05, momentum=0.9)
            rng = np.random.default_rng(12)
            x = rng.normal(size=5)
            t = rng.normal(size=5)
            for _ in range(100):
                _, cache = nn.forward(spec, w, x)
                grads, _ = nn.backward(spec, w, cache, "mse", t)
                nn.optimizer_step(w, grads, state)
            return w

        assert run().digest() == run().digest()

    def test_nonfinite_gradient_names_layer(self):
        spec = nn.NetworkSpec((dense(2, 2),))
        w = random_weights(spec, 0)
        g = [{"w": np.array([[np.nan, 0], [0, 0]]), "b": np.zeros(2)}]
        with pytest.raises(nn.NumericsError, match="layer 0"):
            nn.optimizer_step(w, g, nn.OptimizerState(0.1))

    def test_weights_finite_after_steps(self):
        spec = nn.NetworkSpec((dense(4, 4, "tanh"),))
        w = random_weights(spec, 3)
        state = nn.OptimizerState(0.1)
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.normal(size=4)
            _, cache = nn.forward(spec, w, x)
            grads, _ = nn.backward(spec, w, cache, "mse", rng.normal(size=4))
            nn.optimizer_step(w, grads, state)
            assert w.all_finite()


class TestGradientCheck:
    def test_linear_mse_near_exact(self):
        # quadratic loss: central differences are exact up to roundoff
        spec = nn.NetworkSpec((dense(4, 3),))
        rng = np.random.default_rng(21)
        w = nn.NetworkWeights(
            [{"w": rng.uniform(0.5, 1.5, (3, 4)), "b": rng.uniform(0.1, 0.4, 3)}]
        )
        x = rng.uniform(0.5, 1.5, 4)
        t = rng.uniform(-1.0, -0.5, 3)
        res = nn.gradient_check(spec, w, x, t, "mse", eps=1e-5)
        assert res.max_rel_error < 1e-8

    def test_relu_network_away_from_kinks(self):
        rng = np.random.default_rng(22)
        spec = nn.NetworkSpec((dense(6, 6, "relu"), dense(6, 4, "relu"), dense(4, 2)))
        w = random_weights(spec, 22)
        x = rng.normal(size=6) + 0.5
        t = rng.normal(size=2)
        res = nn.gradient_check(spec, w, x, t, "mse", eps=1e-5)
        assert res.max_rel_error < 1e-4

    def test_all_zero_relu_flags_kink(self):
        spec = nn.NetworkSpec((dense(3, 3, "relu"), dense(3, 1)))
        w = nn.NetworkWeights(
            [
                {"w": np.zeros((3, 3)), "b": np.zeros(3)},
                {"w": np.zeros((1, 3)), "b": np.zeros(1)},
            ]
        )
        res = nn.gradient_check(spec, w, np.ones(3), np.zeros(1), "mse")
        assert res.kink_at_base
        assert res.n_skipped > 0

    def test_eps_domain(self):
        spec = nn.NetworkSpec((dense(2, 2),))
        w = random_weights(spec, 0)
        with pytest.raises(ValueError):
            nn.gradient_check(spec, w, np.ones(2), np.ones(2), "mse", eps=1e-2)

    def test_bce_gradients(self):
        spec = nn.NetworkSpec((dense(3, 2, "tanh"),))
        w = random_weights(spec, 30)
        # map tanh output into (0,1) via targets within range; bce needs preds in [0,1]
        # use a sigmoid-free setup: spec requires preds in [0,1], tanh gives (-1,1),
        # so offset through an identity layer is not available -> test on plain preds
        rng = np.random.default_rng(30)
        p = rng.uniform(0.2, 0.8, size=5)
        t = rng.uniform(0.0, 1.0, size=5)
        eps = 1e-6
        g = nn.loss_grad("bce", p, t)
        for i in range(5):
            pp = p.copy()
            pp[i] += eps
            lp = nn.loss("bce", pp, t)
            pp[i] -= 2 * eps
            lm = nn.loss("bce", pp, t)
            assert abs((lp - lm) / (2 * eps) - g[i]) < 1e-8


class TestGeometry:
    def test_paper_scale_800(self):
        layer = nn.conv_layer(800, 200, "relu")
        assert (layer.kernel_size, layer.stride, layer.padding) == (9, 4, 3)

    def test_paper_scale_200_to_100(self):
        layer = nn.conv_layer(200, 100, "relu")
        assert (layer.kernel_size, layer.stride, layer.padding) == (5, 2, 2)

    def test_unsolvable_geometry(self):
        # stride 1 cannot shrink 10 -> 5 with a kernel of 2; padding only grows spans
        with pytest.raises(nn.ConfigError):
            nn.solve_conv_geometry(10, 5, 2, 1)

    def test_mirror_roundtrip_lengths(self):
        for n in (800, 600, 1800, 404, 240):
            enc = nn.conv_layer(n, 200, "relu")
            dec = nn.mirror_layer(enc, "identity")
            assert dec.in_len == 200 and dec.out_len == n


class TestCheckpoint:
    def test_roundtrip_exact(self, tmp_path):
        spec = nn.NetworkSpec((dense(4, 3, "relu"), dense(3, 2)))
        w = random_weights(spec, 17)
        path = tmp_path / "ckpt.json"
        nn.save_weights(spec, w, path, seed_lineage=[17])
        spec2, w2 = nn.load_weights(path)
        assert spec2 == spec
        for a, b in zip(w.blocks, w2.blocks):
            np.testing.assert_array_equal(a["w"], b["w"])
            np.testing.assert_array_equal(a["b"], b["b"])

    def test_truncated_block_names_layer(self, tmp_path):
        import json

        spec = nn.NetworkSpec((dense(4, 3),))
        w = random_weights(spec, 1)
        path = tmp_path / "ckpt.json"
        nn.save_weights(spec, w, path)
        doc = json.loads(path.read_text())
        doc["params"][0]["w"] = doc["params"][0]["w"][:-2]
        path.write_text(json.dumps(doc))
        with pytest.raises(nn.ConfigError, match="layer 0"):
            nn.load_weights(path)

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{ not json")
        with pytest.raises(nn.ConfigError, match="corrupt"):
            nn.load_weights(path)

    def test_forward_replay(self, tmp_path):
        enc = nn.conv_layer(40, 10, "relu")
        spec = nn.NetworkSpec((enc, dense(10, 10, "tanh")))
        w = random_weights(spec, 5)
        x = np.random.default_rng(5).normal(size=40)
        y1, _ = nn.forward(spec, w, x)
        path = tmp_path / "ckpt.json"
        nn.save_weights(spec, w, path)
        spec2, w2 = nn.load_weights(path)
        y2, _ = nn.forward(spec2, w2, x)
        np.testing.assert_array_equal(y1, y2)
