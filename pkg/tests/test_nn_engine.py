import math

import numpy as np
import pytest

from ecgpain.nn_engine import (
    AdamW,
    DenseLayer,
    DimensionError,
    Mlp,
    NumericalError,
    SmoothedCrossEntropy,
    SquaredError,
    WeightEma,
    adamw_step,
    backward,
    dense_forward,
    finite_difference_check,
    load_checkpoint,
    log_softmax,
    lr_at,
    relu,
    save_checkpoint,
    smoothed_cross_entropy,
    smoothed_cross_entropy_batch,
    smoothing_target,
)


class TestDenseForward:
    def test_identity_weights(self):
        layer = DenseLayer(np.eye(3), np.zeros(3))
        s = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(dense_forward(layer, s), s)

    def test_zero_weights_give_bias(self):
        layer = DenseLayer(np.zeros((2, 4)), np.array([1.0, 2.0]))
        np.testing.assert_array_equal(dense_forward(layer, np.ones(4)), [1.0, 2.0])

    def test_hand_computed(self):
        layer = DenseLayer(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5]))
        np.testing.assert_allclose(dense_forward(layer, np.array([1.0, 1.0])), [3.5, 6.5])

    def test_batch_input(self):
        layer = DenseLayer(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5]))
        out = dense_forward(layer, np.array([[1.0, 1.0], [0.0, 0.0]]))
        np.testing.assert_allclose(out, [[3.5, 6.5], [0.5, -0.5]])

    def test_dimension_mismatch(self):
        layer = DenseLayer(np.eye(3), np.zeros(3))
        with pytest.raises(DimensionError):
            dense_forward(layer, np.ones(4))


class TestRelu:
    def test_basic(self):
        np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_all_negative(self):
        assert np.all(relu(-np.ones(5)) == 0.0)

    def test_idempotent(self):
        x = np.random.default_rng(0).standard_normal(100)
        np.testing.assert_array_equal(relu(relu(x)), relu(x))


class TestSmoothedCrossEntropy:
    def test_uniform_logits_eps0(self):
        assert smoothed_cross_entropy(np.zeros(5), 2, epsilon=0.0) == pytest.approx(math.log(5))

    def test_target_distribution(self):
        p = smoothing_target(0, 5, 0.1)
        np.testing.assert_allclose(p, [0.9, 0.025, 0.025, 0.025, 0.025])
        assert p.sum() == pytest.approx(1.0)

    def test_against_direct_formula(self):
        # independent direct evaluation of -sum p log q
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(2, 8))
            logits = rng.normal(0, 3, n)
            true = int(rng.integers(n))
            eps = float(rng.uniform(0, 0.5))
            q = np.exp(logits) / np.exp(logits).sum()
            p = [eps / (n - 1)] * n
            p[true] = 1 - eps
            expected = -sum(pi * math.log(qi) for pi, qi in zip(p, q))
            got = smoothed_cross_entropy(logits, true, epsilon=eps)
            assert got == pytest.approx(expected, rel=1e-9)

    def test_peaked_logits_case(self):
        logits = np.array([10.0, 0.0, 0.0, 0.0, 0.0])
        q = np.exp(logits - logits.max())
        q /= q.sum()
        p = smoothing_target(0, 5, 0.1)
        expected = float(-(p * np.log(q)).sum())
        assert smoothed_cross_entropy(logits, 0, epsilon=0.1) == pytest.approx(expected, rel=1e-9)

    def test_eps0_equals_plain_cross_entropy(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            logits = rng.normal(0, 2, 5)
            true = int(rng.integers(5))
            plain = -log_softmax(logits)[true]
            assert abs(smoothed_cross_entropy(logits, true, epsilon=0.0) - plain) < 1e-12

    def test_no_overflow_for_huge_logits(self):
        logits = np.array([1e4, -1e4, 0.0])
        val = smoothed_cross_entropy(logits, 0, epsilon=0.1)
        assert np.isfinite(val)

    def test_invalid_epsilon(self):
        with pytest.raises(ValueError):
            smoothed_cross_entropy(np.zeros(3), 0, epsilon=1.0)

    def test_invalid_class(self):
        with pytest.raises(ValueError):
            smoothed_cross_entropy(np.zeros(3), 3)

    def test_batch_mean_matches_single(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(0, 1, (4, 5))
        classes = rng.integers(0, 5, 4)
        loss, dlogits = smoothed_cross_entropy_batch(logits, classes, 0.1)
        singles = [smoothed_cross_entropy(z, int(c), epsilon=0.1) for z, c in zip(logits, classes)]
        assert loss == pytest.approx(np.mean(singles), rel=1e-12)
        assert dlogits.shape == logits.shape


class TestBackward:
    def test_solved_linear_layer_has_zero_gradients(self):
        rng = np.random.default_rng(1)
        layer = DenseLayer(rng.standard_normal((3, 4)), rng.standard_normal(3))
        net = Mlp([layer], [False])
        x = rng.standard_normal((8, 4))
        target = net.forward(x)  # already optimal
        loss, grads = backward(net, x, target, SquaredError())
        assert loss == pytest.approx(0.0, abs=1e-24)
        for g in grads.values():
            np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_two_layer_relu_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        net = Mlp.build([5, 16, 3], [True, False], rng)
        x = rng.standard_normal((6, 5))
        y = rng.integers(0, 3, 6)
        loss_spec = SmoothedCrossEntropy(0.1)
        _, grads = backward(net, x, y, loss_spec)
        params = net.params()
        result = finite_difference_check(
            lambda: backward(net, x, y, loss_spec)[0], params, grads,
            np.random.default_rng(0), n_samples=100,
        )
        assert result["max_rel_error"] <= 1e-4

    def test_dead_relu_unit_gets_zero_gradient(self):
        # drive one hidden unit permanently negative; its incoming weights
        # must receive exactly zero gradient
        w1 = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        b1 = np.array([0.0, 0.0, -100.0])
        w2 = np.ones((1, 3))
        net = Mlp([DenseLayer(w1, b1), DenseLayer(w2, np.zeros(1))], [True, False])
        x = np.array([[1.0, 2.0], [0.5, -1.0]])
        _, grads = backward(net, x, np.zeros((2, 1)), SquaredError())
        np.testing.assert_array_equal(grads["0.W"][2], 0.0)
        assert grads["0.b"][2] == 0.0

    def test_nonfinite_activation_raises(self):
        layer = DenseLayer(np.full((2, 2), 1e308), np.zeros(2))
        net = Mlp([layer, DenseLayer(np.full((2, 2), 1e308), np.zeros(2))], [False, False])
        with np.errstate(over="ignore"), pytest.raises(NumericalError):
            backward(net, np.full((1, 2), 1e10), np.zeros((1, 2)), SquaredError())


class TestAdamW:
    def test_zero_grads_zero_decay_leaves_params(self):
        params = {"w": np.array([1.0, -2.0])}
        opt = AdamW(weight_decay=0.0)
        opt.step(params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_decoupled_decay_shrinks_params(self):
        params = {"w": np.array([1.0, -2.0])}
        opt = AdamW(lr=1e-3, weight_decay=0.1)
        opt.step(params, {"w": np.zeros(2)})
        np.testing.assert_allclose(params["w"], np.array([1.0, -2.0]) * (1 - 1e-4), rtol=1e-12)

    def test_first_step_is_signed_lr(self):
        # bias-corrected first step from zero moments: lr * g / (|g| + eps')
        params = {"w": np.array([0.0])}
        opt = AdamW(lr=1e-3, weight_decay=0.0)
        opt.step(params, {"w": np.array([7.3])})
        assert params["w"][0] == pytest.approx(-1e-3, rel=1e-4)
        params2 = {"w": np.array([0.0])}
        opt2 = AdamW(lr=1e-3, weight_decay=0.0)
        opt2.step(params2, {"w": np.array([-0.02])})
        assert params2["w"][0] == pytest.approx(1e-3, rel=1e-3)

    def test_functional_alias(self):
        params = {"w": np.array([1.0])}
        opt = AdamW(weight_decay=0.0)
        adamw_step(params, {"w": np.array([1.0])}, opt)
        assert opt.step_count == 1

    def test_decay_filter(self):
        params = {"a.W": np.array([1.0]), "a.b": np.array([1.0])}
        opt = AdamW(lr=1e-3, weight_decay=0.1, decay_filter=lambda n: n.endswith(".W"))
        opt.step(params, {k: np.zeros(1) for k in params})
        assert params["a.W"][0] == pytest.approx(1 - 1e-4)
        assert params["a.b"][0] == 1.0

    def test_shape_mismatch(self):
        opt = AdamW()
        with pytest.raises(DimensionError):
            opt.step({"w": np.zeros(3)}, {"w": np.zeros(4)})


class TestSchedule:
    def test_warmup_start_is_zero(self):
        assert lr_at(0) == 0.0

    def test_warmup_end_is_base_rate(self):
        assert lr_at(50) == 1e-3

    def test_cosine_midpoint(self):
        assert lr_at(175) == pytest.approx(0.5e-3, abs=1e-15)

    def test_monotone_nonincreasing_after_warmup(self):
        values = [lr_at(e) for e in range(50, 300)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_warmup_is_linear(self):
        for e in range(50):
            assert lr_at(e) == pytest.approx(1e-3 * e / 50, rel=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            lr_at(300)
        with pytest.raises(ValueError):
            lr_at(-1)

    def test_custom_totals(self):
        assert lr_at(10, base_lr=2e-3, warmup_epochs=10, total_epochs=20) == 2e-3


class TestEma:
    def test_decay_zero_tracks_params_exactly(self):
        params = {"w": np.array([0.0])}
        ema = WeightEma(params, decay=0.0)
        params["w"][0] = 3.14
        ema.update(params)
        assert ema.shadow["w"][0] == 3.14

    def test_constant_params_convergence(self):
        params = {"w": np.array([1.0])}
        ema = WeightEma({"w": np.array([0.0])}, decay=0.9)
        last = 0.0
        for _ in range(100):
            ema.update(params)
            assert ema.shadow["w"][0] > last
            last = ema.shadow["w"][0]
        assert last == pytest.approx(1.0, abs=1e-4)

    def test_geometric_series_value(self):
        params = {"w": np.array([1.0])}
        ema = WeightEma({"w": np.array([0.0])}, decay=0.999)
        for _ in range(1000):
            ema.update(params)
        assert ema.shadow["w"][0] == pytest.approx(1 - 0.999**1000, rel=1e-9)

    def test_swap_restores_live_weights(self):
        params = {"w": np.array([5.0])}
        ema = WeightEma({"w": np.array([1.0])}, decay=0.5)
        with ema.swapped(params):
            assert params["w"][0] == 1.0
        assert params["w"][0] == 5.0

    def test_invalid_decay(self):
        with pytest.raises(ValueError):
            WeightEma({"w": np.zeros(1)}, decay=1.0)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        net = Mlp.build([4, 8, 2], [True, False], rng)
        params = net.params()
        ema = WeightEma(params, decay=0.99)
        opt = AdamW()
        opt.step(params, {k: rng.standard_normal(v.shape) for k, v in params.items()})
        ema.update(params)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, params, {"config_hash": "abc123"}, ema=ema, optimizer=opt)
        loaded, meta, shadow, opt_arrays = load_checkpoint(path)
        assert meta["config_hash"] == "abc123"
        assert meta["optimizer_step"] == 1
        for k, v in params.items():
            assert np.array_equal(loaded[k], v)
            assert loaded[k].dtype == np.float64
        for k, v in ema.shadow.items():
            assert np.array_equal(shadow[k], v)
        for k, v in opt.state_arrays().items():
            assert np.array_equal(opt_arrays[k], v)

    def test_version_check(self, tmp_path):
        path = tmp_path / "bad.npz"
        import json as _json
        np.savez(path, __meta__=np.frombuffer(_json.dumps({"checkpoint_version": 99}).encode(),
                                              dtype=np.uint8))
        with pytest.raises(ValueError):
            load_checkpoint(path)
