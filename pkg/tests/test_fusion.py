"""Recurrent fusion classifier: forward, gradients, training."""

import math

import numpy as np
import pytest

from voltex import fusion, glcm
from voltex.errors import ConfigError, DimError, LabelError


def make_seq(features, real=None):
    return glcm.GlcmSequence(mode=glcm.MODE_3D, features=np.asarray(features, float),
                             levels=2, real=real)


def zero_params(input_size, hidden_size, activation="relu"):
    kwargs = {}
    for gate in ("i", "f", "o", "g"):
        kwargs[f"w_{gate}"] = np.zeros((hidden_size, input_size))
        kwargs[f"u_{gate}"] = np.zeros((hidden_size, hidden_size))
        kwargs[f"b_{gate}"] = np.zeros(hidden_size)
    return fusion.LstmLayerParams(activation=activation, **kwargs)


def numeric_gradients(model, seq, label, step=1e-5):
    grads = fusion.zero_gradients(model)
    for param, grad in fusion.parameter_pairs(model, grads):
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = param[idx]
            param[idx] = orig + step
            up = fusion.loss(fusion.forward(model, seq), label)
            param[idx] = orig - step
            down = fusion.loss(fusion.forward(model, seq), label)
            param[idx] = orig
            grad[idx] = (up - down) / (2 * step)
    return grads


def max_rel_err(model, analytic, numeric):
    worst = 0.0
    for (_, a), (_, n) in zip(fusion.parameter_pairs(model, analytic),
                              fusion.parameter_pairs(model, numeric)):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-5)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class TestCell:
    def test_zero_fixed_point(self):
        p = zero_params(3, 4)
        h, c = fusion.lstm_cell(np.zeros(3), np.zeros(4), np.zeros(4), p)
        assert not h.any() and not c.any()

    def test_hand_evaluation(self):
        # hidden 2, input 1, every weight set by hand; step the five equations
        p = zero_params(1, 2)
        p.w_i[:] = [[1.0], [0.5]]
        p.w_f[:] = [[-1.0], [0.0]]
        p.w_o[:] = [[0.5], [1.0]]
        p.w_g[:] = [[2.0], [-1.0]]
        p.b_i[:] = [0.1, -0.1]
        x = np.array([1.0])
        h_prev = np.zeros(2)
        c_prev = np.array([0.3, -0.2])

        def sig(v):
            return 1.0 / (1.0 + math.exp(-v))

        i = np.array([sig(1.1), sig(0.4)])
        f = np.array([sig(-1.0), sig(0.0)])
        o = np.array([sig(0.5), sig(1.0)])
        g = np.array([max(2.0, 0.0), max(-1.0, 0.0)])
        c = f * c_prev + i * g
        h = o * np.maximum(c, 0.0)

        got_h, got_c = fusion.lstm_cell(x, h_prev, c_prev, p)
        np.testing.assert_allclose(got_c, c, atol=1e-15)
        np.testing.assert_allclose(got_h, h, atol=1e-15)

    def test_relu_clips_negative_candidate(self):
        p = zero_params(1, 1)
        p.w_g[:] = [[-5.0]]
        c_prev = np.array([0.8])
        _, c = fusion.lstm_cell(np.array([1.0]), np.zeros(1), c_prev, p)
        # g = relu(-5) = 0, so c = f * c_prev exactly
        assert c[0] == 0.5 * 0.8

    def test_dim_mismatch(self):
        p = zero_params(3, 4)
        with pytest.raises(DimError):
            fusion.lstm_cell(np.zeros(2), np.zeros(4), np.zeros(4), p)


class TestForward:
    def test_softmax_uniform_on_zero_logits(self):
        model = fusion.build_model("glcm2d", 4, hidden_size=3, seed=0)
        dense = model.layers[-1]
        dense.weight[:] = 0.0
        dense.bias[:] = 0.0
        probs = fusion.forward(model, make_seq(np.ones((2, 4))))
        np.testing.assert_allclose(probs, [1 / 3] * 3, atol=1e-15)

    def test_probability_simplex(self):
        rng = np.random.default_rng(0)
        model = fusion.build_model("glcm3d", 5, hidden_size=4, dense_size=3, seed=1)
        for _ in range(20):
            probs = fusion.forward(model, make_seq(rng.normal(size=(3, 5))))
            assert abs(probs.sum() - 1.0) <= 1e-12
            assert np.all(probs >= 0)

    def test_last_timestep_matters(self):
        rng = np.random.default_rng(1)
        model = fusion.build_model("glcm2d", 4, hidden_size=3, seed=2, init_scale=0.5)
        base = rng.normal(size=(3, 4))
        changed = base.copy()
        changed[-1] += 1.0
        a = fusion.forward(model, make_seq(base))
        b = fusion.forward(model, make_seq(changed))
        assert not np.allclose(a, b)

    def test_zero_recurrence_depends_on_last_step_only(self):
        # with U = 0 and c zeroed by f-gate saturation the seq-to-one output
        # depends only on the final timestep's input
        model = fusion.build_model("glcm2d", 4, hidden_size=3, seed=3, init_scale=0.4)
        for layer in model.layers[:2]:
            for step in layer.steps:
                for gate in ("i", "f", "o", "g"):
                    getattr(step, f"u_{gate}")[:] = 0.0
                step.b_f[:] = -40.0  # forget gate ~ 0: kill the cell path
        rng = np.random.default_rng(4)
        tail = rng.normal(size=4)
        seq_a = np.vstack([rng.normal(size=(2, 4)), tail])
        seq_b = np.vstack([rng.normal(size=(2, 4)) * 3.0, tail])
        a = fusion.forward(model, make_seq(seq_a))
        b = fusion.forward(model, make_seq(seq_b))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_front_padding_selects_last_real(self):
        model = fusion.build_model("glcm2_5d", 4, hidden_size=3, dense_size=3, seed=5)
        feats = np.random.default_rng(6).normal(size=(3, 4))
        padded = np.vstack([np.zeros((2, 4)), feats])
        real = np.array([False, False, True, True, True])
        a = fusion.forward(model, make_seq(padded, real=real))
        trailing = np.vstack([np.zeros((2, 4)), feats, np.ones((1, 4))])
        real_t = np.array([False, False, True, True, True, False])
        b = fusion.forward(model, make_seq(trailing, real=real_t))
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_dim_error(self):
        model = fusion.build_model("glcm2d", 4, hidden_size=3, seed=0)
        with pytest.raises(DimError):
            fusion.forward(model, make_seq(np.ones((2, 5))))

    def test_batch_decomposition_invariance(self):
        rng = np.random.default_rng(7)
        model = fusion.build_model("glcm3d", 6, hidden_size=4, dense_size=4, seed=8)
        items = [make_seq(rng.normal(size=(3, 6))) for _ in range(6)]
        singles = [fusion.forward(model, s) for s in items]
        again = [fusion.forward(model, s) for s in items]
        for a, b in zip(singles, again):
            assert np.array_equal(a, b)


class TestLoss:
    def test_perfect_prediction(self):
        assert fusion.loss(np.array([1.0, 0.0, 0.0]), 0) == 0.0

    def test_uniform(self):
        assert abs(fusion.loss(np.array([1 / 3] * 3), 2) - math.log(3)) <= 1e-12

    def test_quarter(self):
        assert abs(fusion.loss(np.array([0.5, 0.25, 0.25]), 1) - math.log(4)) <= 1e-12

    def test_clamped_at_zero(self):
        assert fusion.loss(np.array([0.0, 1.0, 0.0]), 0) == -math.log(1e-12)

    def test_bad_label(self):
        with pytest.raises(LabelError):
            fusion.loss(np.array([1.0, 0.0, 0.0]), 3)


class TestBackward:
    def test_softmax_cross_entropy_closed_form(self):
        model = fusion.build_model("glcm2d", 3, hidden_size=2, seed=9)
        seq = make_seq(np.random.default_rng(10).normal(size=(2, 3)))
        probs, cache = fusion._forward_full(model, seq)
        grads = fusion.backward(model, seq, 1)
        x_in, _ = cache[5][-1]
        onehot = np.zeros(3)
        onehot[1] = 1.0
        want = np.outer(probs - onehot, x_in)
        np.testing.assert_allclose(grads[2]["weight"], want, atol=1e-12)
        np.testing.assert_allclose(grads[2]["bias"], probs - onehot, atol=1e-12)

    def test_zero_gradient_at_hard_prediction(self):
        model = fusion.build_model("glcm2d", 3, hidden_size=2, seed=11)
        dense = model.layers[-1]
        dense.weight[:] = 0.0
        dense.bias[:] = np.array([60.0, 0.0, 0.0])  # softmax ~ [1, 0, 0]
        seq = make_seq(np.zeros((2, 3)))
        grads = fusion.backward(model, seq, 0)
        for _, g in fusion.parameter_pairs(model, grads):
            assert np.max(np.abs(g)) <= 1e-12

    @pytest.mark.parametrize("mode", ["glcm2d", "glcm2_5d", "glcm3d"])
    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    def test_finite_differences(self, mode, activation):
        rng = np.random.default_rng(hash((mode, activation)) % 2**32)
        seq = make_seq(rng.normal(0, 0.5, size=(3, 6)))
        model = fusion.build_model(mode, 6, hidden_size=4, dense_size=5,
                                   cell_activation=activation,
                                   seed=12, init_scale=0.25)
        label = int(rng.integers(0, 3))
        analytic = fusion.backward(model, seq, label)
        numeric = numeric_gradients(model, seq, label)
        assert max_rel_err(model, analytic, numeric) <= 1e-5

    def test_finite_differences_unshared(self):
        rng = np.random.default_rng(13)
        seq = make_seq(rng.normal(0, 0.5, size=(3, 4)))
        model = fusion.build_model("glcm2d", 4, hidden_size=3, seed=14,
                                   init_scale=0.3, shared_weights=False,
                                   timesteps=3)
        assert len(model.layers[0].steps) == 3
        analytic = fusion.backward(model, seq, 2)
        numeric = numeric_gradients(model, seq, 2)
        assert max_rel_err(model, analytic, numeric) <= 1e-5

    def test_finite_differences_with_padding(self):
        rng = np.random.default_rng(15)
        feats = np.vstack([np.zeros((2, 4)), rng.normal(0, 0.5, size=(2, 4))])
        real = np.array([False, False, True, True])
        seq = make_seq(feats, real=real)
        model = fusion.build_model("glcm2_5d", 4, hidden_size=3, dense_size=3,
                                   seed=16, init_scale=0.3)
        analytic = fusion.backward(model, seq, 0)
        numeric = numeric_gradients(model, seq, 0)
        assert max_rel_err(model, analytic, numeric) <= 1e-5


class TestParameterCount:
    @pytest.mark.parametrize("mode,f,expected_tail", [
        ("glcm2d", 10, [3]),
        ("glcm2_5d", 10, [32, 3]),
        ("glcm3d", 10, [32, 3]),
    ])
    def test_closed_form(self, mode, f, expected_tail):
        model = fusion.build_model(mode, f, hidden_size=128, dense_size=32, seed=0)
        total = fusion.lstm_parameter_count(f, 128)
        total += fusion.lstm_parameter_count(128, 128)
        width = 128
        for out in expected_tail:
            total += out * width + out
            width = out
        assert fusion.parameter_count(model) == total


class TestTrain:
    def make_toy_dataset(self, rng, n_per_class=20, timesteps=2, f=6):
        """Three classes with well-separated timestep means."""
        data = []
        for label, center in enumerate((-1.0, 0.0, 1.0)):
            for _ in range(n_per_class):
                feats = rng.normal(center, 0.15, size=(timesteps, f))
                data.append((make_seq(feats), label))
        return data

    def test_zero_learning_rate_freezes(self):
        rng = np.random.default_rng(17)
        dataset = self.make_toy_dataset(rng, n_per_class=3)
        model = fusion.build_model("glcm2d", 6, hidden_size=3, seed=18)
        before = [p.copy() for p, _ in fusion.parameter_pairs(
            model, fusion.zero_gradients(model))]
        fusion.train(model, dataset, fusion.TrainConfig(learning_rate=0.0, epochs=3))
        after = [p for p, _ in fusion.parameter_pairs(
            model, fusion.zero_gradients(model))]
        for a, b in zip(before, after):
            assert np.array_equal(a, b)

    def test_separable_dataset_fits(self):
        rng = np.random.default_rng(19)
        dataset = self.make_toy_dataset(rng)
        model = fusion.build_model("glcm2d", 6, hidden_size=8, seed=20)
        config = fusion.TrainConfig(learning_rate=0.2, epochs=200, batch_size=10,
                                    seed=21)
        trace = fusion.train(model, dataset, config)
        accuracies = [row[2] for row in trace]
        assert max(accuracies) == 1.0
        assert trace[-1][2] == 1.0

    def test_deterministic_trace(self):
        rng = np.random.default_rng(22)
        dataset = self.make_toy_dataset(rng, n_per_class=4)
        config = fusion.TrainConfig(learning_rate=0.1, epochs=5, batch_size=4,
                                    seed=23)
        t1 = fusion.train(fusion.build_model("glcm2d", 6, hidden_size=4, seed=24),
                          dataset, config)
        t2 = fusion.train(fusion.build_model("glcm2d", 6, hidden_size=4, seed=24),
                          dataset, config)
        assert [(r[0], r[1], r[2]) for r in t1] == [(r[0], r[1], r[2]) for r in t2]

    def test_empty_dataset_rejected(self):
        model = fusion.build_model("glcm2d", 6, hidden_size=3, seed=0)
        with pytest.raises(ConfigError):
            fusion.train(model, [], fusion.TrainConfig())

    def test_mixed_feature_sizes_rejected(self):
        model = fusion.build_model("glcm2d", 6, hidden_size=3, seed=0)
        bad = [(make_seq(np.zeros((2, 6))), 0), (make_seq(np.zeros((2, 5))), 1)]
        with pytest.raises(DimError):
            fusion.train(model, bad, fusion.TrainConfig())

    def test_negative_lr_rejected(self):
        with pytest.raises(ConfigError):
            fusion.TrainConfig(learning_rate=-0.1).validate()


class TestPredict:
    def test_argmax(self):
        model = fusion.build_model("glcm2d", 4, hidden_size=3, seed=25)
        label, probs = fusion.predict(model, make_seq(np.ones((2, 4))))
        assert label == int(np.argmax(probs))

    def test_tie_breaks_low_index(self):
        assert int(np.argmax(np.array([0.4, 0.4, 0.2]))) == 0

    def test_constant_logit_shift_invariant(self):
        model = fusion.build_model("glcm2d", 4, hidden_size=3, seed=26)
        seq = make_seq(np.random.default_rng(27).normal(size=(2, 4)))
        label_a, _ = fusion.predict(model, seq)
        model.layers[-1].bias += 7.5  # shift all logits
        label_b, _ = fusion.predict(model, seq)
        assert label_a == label_b

    def test_consistent_with_training_trace(self):
        rng = np.random.default_rng(28)
        dataset = TestTrain().make_toy_dataset(rng, n_per_class=5)
        model = fusion.build_model("glcm2d", 6, hidden_size=8, seed=29)
        trace = fusion.train(model, dataset,
                             fusion.TrainConfig(learning_rate=0.2, epochs=60,
                                                batch_size=5, seed=30))
        correct = sum(fusion.predict(model, s)[0] == y for s, y in dataset)
        assert correct / len(dataset) == trace[-1][2]


class TestCheckpoint:
    def test_roundtrip_bytes(self, tmp_path):
        model = fusion.build_model("glcm3d", 7, hidden_size=4, dense_size=5, seed=31)
        p1 = tmp_path / "a.tfuse"
        p2 = tmp_path / "b.tfuse"
        fusion.save_model(model, p1)
        back = fusion.load_model(p1)
        fusion.save_model(back, p2)
        assert p1.read_bytes() == p2.read_bytes()
        seq = make_seq(np.random.default_rng(32).normal(size=(3, 7)))
        np.testing.assert_array_equal(fusion.forward(model, seq),
                                      fusion.forward(back, seq))

    def test_unshared_roundtrip(self, tmp_path):
        model = fusion.build_model("glcm2d", 4, hidden_size=3, seed=34,
                                   shared_weights=False, timesteps=3)
        path = tmp_path / "u.tfuse"
        fusion.save_model(model, path)
        back = fusion.load_model(path)
        assert len(back.layers[0].steps) == 3
        seq = make_seq(np.random.default_rng(35).normal(size=(3, 4)))
        np.testing.assert_array_equal(fusion.forward(model, seq),
                                      fusion.forward(back, seq))

    def test_magic_guard(self, tmp_path):
        path = tmp_path / "bad.tfuse"
        path.write_bytes(b"NOTMAGIC\n")
        with pytest.raises(Exception):
            fusion.load_model(path)

    def test_truncation_detected(self, tmp_path):
        model = fusion.build_model("glcm2d", 3, hidden_size=2, seed=33)
        path = tmp_path / "t.tfuse"
        fusion.save_model(model, path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        from voltex.errors import FormatError

        with pytest.raises(FormatError):
            fusion.load_model(path)
