import math

import numpy as np
import pytest

from kanagg import (ConfigError, NetworkConfig, TrainConfig, TrainingDiverged,
                    adam_init, adam_step, backward, build_network, evaluate,
                    forward, softmax_cross_entropy, squared_error_on_index,
                    synthetic_dataset, train)
from kanagg.aggregators import AGGREGATOR_NAMES

from oracles import reference_adam, relative_error


class TestSoftmaxCrossEntropy:
    def test_two_equal_logits(self):
        loss, d = softmax_cross_entropy(np.array([0.0, 0.0]), 0)
        assert loss == pytest.approx(math.log(2), abs=1e-12)
        np.testing.assert_allclose(d, [-0.5, 0.5])

    def test_uniform_logits_any_width(self):
        for c in (2, 5, 9):
            loss, d = softmax_cross_entropy(np.full(c, 1.3), c - 1)
            assert loss == pytest.approx(math.log(c), abs=1e-12)
            assert d.sum() == pytest.approx(0.0, abs=1e-12)

    def test_stable_under_large_logits(self):
        loss, _ = softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        step = 1e-6
        for _ in range(50):
            z = rng.normal(0, 2, 4)
            label = int(rng.integers(0, 4))
            _, d = softmax_cross_entropy(z, label)
            for i in range(4):
                zp = z.copy(); zp[i] += step
                zm = z.copy(); zm[i] -= step
                fd = (softmax_cross_entropy(zp, label)[0]
                      - softmax_cross_entropy(zm, label)[0]) / (2 * step)
                assert abs(d[i] - fd) < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros(3), 3)
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros(3), -1)

    def test_scalar_head_loss(self):
        loss, d = squared_error_on_index(np.array([2.5]), 3)
        assert loss == pytest.approx(0.25)
        np.testing.assert_allclose(d, [-1.0])


class TestBackward:
    def test_zero_upstream_gives_zero_gradients(self):
        net = build_network(NetworkConfig((3, 4, 2), ("mean", "mean"), seed=0))
        x = np.random.default_rng(1).uniform(-1, 1, (5, 3))
        _, trace = forward(net, x, trace=True)
        grads = backward(net, trace, np.zeros((5, 2)))
        for g in grads:
            np.testing.assert_array_equal(g, 0.0)

    def test_single_edge_chain_equals_edge_backward(self):
        from kanagg import edge_backward
        net = build_network(NetworkConfig((1, 1), ("sum",), seed=5))
        x = 0.62
        _, trace = forward(net, np.array([x]), trace=True)
        grads = backward(net, trace, np.array([[1.0]]))
        d_x, d_c, d_wb, d_ws = edge_backward(x, net.layers[0].edge(0, 0), 1.0)
        np.testing.assert_allclose(grads[0][0, 0], d_c, atol=1e-14)
        assert grads[1][0, 0] == pytest.approx(d_wb, abs=1e-14)
        assert grads[2][0, 0] == pytest.approx(d_ws, abs=1e-14)

    def test_mismatched_trace_rejected(self):
        net_a = build_network(NetworkConfig((3, 4, 2), ("mean", "mean"), seed=0))
        net_b = build_network(NetworkConfig((3, 4, 2), ("mean", "mean"), seed=0))
        x = np.zeros((2, 3))
        _, trace = forward(net_a, x, trace=True)
        with pytest.raises(ValueError):
            backward(net_b, trace, np.zeros((2, 2)))
        with pytest.raises(ValueError):
            backward(net_a, trace, np.zeros((3, 2)))

    @pytest.mark.parametrize("agg", AGGREGATOR_NAMES)
    def test_full_network_matches_finite_differences(self, agg):
        self._check_gradients(agg, layer_norm=False, seed=17)

    def test_layer_norm_gradients(self):
        self._check_gradients("sum", layer_norm=True, seed=23)

    @staticmethod
    def _check_gradients(agg, layer_norm, seed, widths=(3, 4, 2), n_points=4):
        rng = np.random.default_rng(seed)
        net = build_network(NetworkConfig(widths, (agg, agg),
                                          layer_norm=layer_norm, seed=seed))
        for layer in net.layers:  # move off the all-ones init, keep non-degenerate
            layer.w_base[...] = rng.normal(1.0, 0.3, layer.w_base.shape)
            layer.w_spline[...] = rng.normal(1.0, 0.3, layer.w_spline.shape)
        params = net.parameters()
        xs = rng.uniform(-1.4, 1.4, (n_points, widths[0]))
        labels = rng.integers(0, widths[-1], n_points)
        step = 1e-5

        def mean_loss():
            losses, _ = softmax_cross_entropy(forward(net, xs), labels)
            return float(losses.mean())

        logits, trace = forward(net, xs, trace=True)
        _, d_logits = softmax_cross_entropy(logits, labels)
        grads = backward(net, trace, d_logits)
        for p, g in zip(params, grads):
            flat_p = p.reshape(-1)
            flat_g = g.reshape(-1)
            for i in range(flat_p.size):
                orig = flat_p[i]
                flat_p[i] = orig + step
                hi = mean_loss()
                flat_p[i] = orig - step
                lo = mean_loss()
                flat_p[i] = orig
                fd = (hi - lo) / (2 * step)
                assert relative_error(flat_g[i], fd, floor=1e-6) < 1e-3, \
                    f"{agg}: param {i} analytic {flat_g[i]} vs fd {fd}"


class TestAdam:
    def test_first_step_is_signed_lr(self):
        cfg = TrainConfig(learning_rate=0.01)
        p = [np.array([1.0, -2.0])]
        g = [np.array([0.5, -3.0])]
        state = adam_init(p)
        adam_step(p, g, state, cfg)
        expected = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8)
        assert p[0][0] == pytest.approx(expected, rel=1e-12)
        assert p[0][1] == pytest.approx(-2.0 + 0.01 * 3.0 / (3.0 + 1e-8), rel=1e-12)

    def test_zero_gradient_leaves_parameters(self):
        cfg = TrainConfig()
        p = [np.array([0.3, 0.7])]
        state = adam_init(p)
        for _ in range(25):
            adam_step(p, [np.zeros(2)], state, cfg)
        np.testing.assert_array_equal(p[0], [0.3, 0.7])
        assert state.t == 25

    def test_ten_step_quadratic_matches_reference(self):
        # minimize f(a, b) = (a - 1)^2 + 2 b^2 from (4, -3)
        cfg = TrainConfig(learning_rate=0.05)

        def grad_fn(params):
            return [2 * (params[0] - 1), 4 * params[1]]

        expected = reference_adam([4.0, -3.0], grad_fn, 0.05, cfg.beta1,
                                  cfg.beta2, cfg.eps, steps=10)
        p = [np.array([4.0]), np.array([-3.0])]
        state = adam_init(p)
        for step in range(10):
            grads = [np.array([g]) for g in grad_fn([p[0][0], p[1][0]])]
            adam_step(p, grads, state, cfg)
            assert abs(p[0][0] - expected[step][0]) < 1e-10
            assert abs(p[1][0] - expected[step][1]) < 1e-10


class TestTrain:
    def test_xor_sanity(self):
        data = synthetic_dataset("xor", 2, 200, seed=3)
        net = build_network(NetworkConfig((2, 10, 2), ("mean", "mean"), seed=11))
        res = train(net, data, TrainConfig(iterations=500, seed=7))
        assert res.train_accuracy >= 0.95
        assert res.head == "softmax"

    def test_separable_blobs_sanity(self):
        data = synthetic_dataset("gaussian-blobs", 6, 400, seed=8, n_classes=3)
        net = build_network(NetworkConfig((6, 10, 3), ("mean", "mean"), seed=15))
        res = train(net, data, TrainConfig(iterations=300, seed=4))
        assert res.test_accuracy >= 0.9

    def test_zero_learning_rate_is_identity(self):
        data = synthetic_dataset("gaussian-blobs", 4, 120, seed=1)
        net = build_network(NetworkConfig((4, 6, 3), ("mean", "mean"), seed=2))
        before = [p.copy() for p in net.parameters()]
        acc_before = evaluate(net, data.features[data.test_idx],
                              data.labels[data.test_idx], data.n_classes)
        res = train(net, data, TrainConfig(iterations=50, learning_rate=0.0, seed=3))
        for old, new in zip(before, net.parameters()):
            np.testing.assert_array_equal(old, new)
        assert res.test_accuracy == acc_before

    def test_deterministic_loss_curves(self):
        data = synthetic_dataset("gaussian-blobs", 4, 150, seed=5)
        curves = []
        for _ in range(2):
            net = build_network(NetworkConfig((4, 8, 3), ("sum", "sum"), seed=9))
            res = train(net, data, TrainConfig(iterations=60, seed=13))
            curves.append(res.loss_curve)
        assert curves[0] == curves[1]

    def test_loss_decreases_early_on_xor(self):
        for agg in ("sum", "mean"):
            drops = []
            for seed in range(5):
                data = synthetic_dataset("xor", 2, 200, seed=100 + seed)
                net = build_network(NetworkConfig((2, 10, 2), (agg, agg),
                                                  seed=200 + seed))
                res = train(net, data, TrainConfig(iterations=50, seed=seed))
                drops.append(res.loss_curve[-1] - res.loss_curve[0])
            assert np.mean(drops) <= 0.0, f"{agg} did not descend: {drops}"

    def test_scalar_head_strict_mode(self):
        data = synthetic_dataset("gaussian-blobs", 4, 200, seed=6)
        net = build_network(NetworkConfig((4, 8, 1), ("mean", "mean"), seed=4))
        res = train(net, data, TrainConfig(iterations=300, seed=1))
        assert res.head == "scalar-index"
        assert res.test_accuracy >= 0.5  # weak head, but must beat chance on blobs

    def test_adherence_collection_toggle(self):
        data = synthetic_dataset("gaussian-blobs", 4, 120, seed=2)
        net = build_network(NetworkConfig((4, 6, 3), ("mean", "mean"), seed=1))
        res = train(net, data, TrainConfig(iterations=20, seed=0))
        assert res.adherence is None
        net2 = build_network(NetworkConfig((4, 6, 3), ("mean", "mean"), seed=1))
        res2 = train(net2, data, TrainConfig(iterations=20, seed=0,
                                             trace_adherence=True))
        assert len(res2.adherence) == 1
        assert len(res2.adherence_series) == 20
        assert 0.0 <= res2.adherence[0] <= 1.0

    def test_dimension_mismatch_rejected(self):
        data = synthetic_dataset("gaussian-blobs", 4, 120, seed=2)
        net = build_network(NetworkConfig((5, 6, 3), ("mean", "mean"), seed=1))
        with pytest.raises(ConfigError):
            train(net, data, TrainConfig(iterations=5))
        bad_head = build_network(NetworkConfig((4, 6, 2), ("mean", "mean"), seed=1))
        with pytest.raises(ConfigError):
            train(bad_head, data, TrainConfig(iterations=5))

    def test_divergence_detected(self):
        # one step at this rate pushes w_spline * coeffs past float64 range
        data = synthetic_dataset("gaussian-blobs", 4, 120, seed=2)
        net = build_network(NetworkConfig((4, 6, 3), ("sum", "sum"), seed=1))
        with pytest.raises(TrainingDiverged), np.errstate(all="ignore"):
            train(net, data, TrainConfig(iterations=200, learning_rate=1e160, seed=0))


class TestEvaluate:
    def test_perfect_and_constant_predictors(self):
        net = build_network(NetworkConfig((2, 4, 2), ("mean", "mean"), seed=0))
        x = np.random.default_rng(0).uniform(-1, 1, (40, 2))
        logits = forward(net, x)
        labels = logits.argmax(axis=1)
        assert evaluate(net, x, labels, 2) == 1.0
        # constant predictor on balanced labels
        for layer in net.layers:
            layer.coeffs[...] = 0.0
            layer.w_base[...] = 0.0
            layer.w_spline[...] = 0.0
        balanced = np.array([0, 1] * 20)
        assert evaluate(net, x, balanced, 2) == 0.5  # argmax ties -> class 0

    def test_invariant_to_positive_rescaling(self):
        net = build_network(NetworkConfig((3, 5, 4), ("sum", "sum"), seed=2))
        x = np.random.default_rng(1).uniform(-1, 1, (30, 3))
        labels = np.random.default_rng(2).integers(0, 4, 30)
        base = evaluate(net, x, labels, 4)
        # scaling the output layer's edge weights rescales every logit by 3
        net.layers[-1].w_base[...] *= 3.0
        net.layers[-1].w_spline[...] *= 3.0
        assert evaluate(net, x, labels, 4) == base

    def test_empty_set_rejected(self):
        net = build_network(NetworkConfig((2, 3, 2), ("sum", "sum"), seed=0))
        with pytest.raises(ValueError):
            evaluate(net, np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
