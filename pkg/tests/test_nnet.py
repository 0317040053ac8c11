import math

import numpy as np
import pytest

from oracles import direct_conv, gradcheck_model, gradient_check, relative_error
from polypwsi.core import ClassLabel, RandomStream
from polypwsi.errors import CheckpointError, EmptyDataset, RangeError, ShapeError
from polypwsi.nnet import checkpoint
from polypwsi.nnet.layers import ConvLayer, conv_backward, conv_forward, init_conv, softmax, softmax_xent
from polypwsi.nnet.model import ResidualBlock, TinyResNet, block_backward, block_forward, loss_and_gradients
from polypwsi.nnet.optim import SGDConfig, lr_at, sgd_step
from polypwsi.nnet.training import train
from polypwsi.synthetic import color_blob_dataset


def _zero_conv(c_in, c_out, k=3, stride=1, bias=0.0):
    return ConvLayer(np.zeros((c_out, c_in, k, k)), np.full(c_out, bias), stride)


class TestConv:
    def test_1x1_identity(self, rng):
        x = rng.normal(size=(1, 4, 5))
        layer = ConvLayer(np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(conv_forward(layer, x), x)

    def test_zero_kernel_gives_bias(self, rng):
        y = conv_forward(_zero_conv(2, 3, bias=0.7), rng.normal(size=(2, 5, 4)))
        assert y.shape == (3, 5, 4)
        assert (y == 0.7).all()

    def test_centered_kernel_identity(self, rng):
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        x = rng.normal(size=(1, 5, 5))
        np.testing.assert_array_equal(conv_forward(ConvLayer(w, np.zeros(1)), x), x)

    @pytest.mark.parametrize("k,stride,h,w", [(3, 1, 5, 6), (3, 2, 7, 6), (1, 2, 5, 5), (1, 1, 3, 4)])
    def test_matches_direct_oracle(self, rng, k, stride, h, w):
        layer = init_conv(rng, 3, 4, k, stride)
        layer.biases[...] = rng.normal(size=4)
        x = rng.normal(size=(3, h, w))
        np.testing.assert_allclose(conv_forward(layer, x), direct_conv(x, layer.weights, layer.biases, stride),
                                   atol=1e-12)

    def test_stride_two_ceil(self, rng):
        assert conv_forward(init_conv(rng, 1, 1, 3, 2), np.zeros((1, 7, 5))).shape == (1, 4, 3)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            conv_forward(init_conv(rng, 3, 2, 3), np.zeros((2, 4, 4)))

    @pytest.mark.parametrize("kwargs", [dict(k=5), dict(stride=3)])
    def test_rejects_bad_config(self, kwargs):
        k, stride = kwargs.get("k", 3), kwargs.get("stride", 1)
        with pytest.raises(ShapeError):
            ConvLayer(np.zeros((1, 1, k, k)), np.zeros(1), stride)

    def test_input_gradient_single_layer(self, rng):
        # Affine layer: loss = <w_out, conv(x)>, checked at 10 coordinates with step 1e-4.
        layer = init_conv(rng, 2, 3, 3, 2)
        x = rng.normal(size=(2, 6, 5))
        y, cache = conv_forward(layer, x, return_cache=True)
        g = rng.normal(size=y.shape)
        dx, dw, db = conv_backward(layer, g, cache)
        h = 1e-4
        for _ in range(10):
            idx = tuple(rng.integers(0, s) for s in layer.weights.shape)
            orig = layer.weights[idx]
            layer.weights[idx] = orig + h
            up = (conv_forward(layer, x) * g).sum()
            layer.weights[idx] = orig - h
            down = (conv_forward(layer, x) * g).sum()
            layer.weights[idx] = orig
            assert relative_error(dw[idx], (up - down) / (2 * h)) < 1e-4
        np.testing.assert_allclose(db, g.sum(axis=(1, 2)))


class TestBlock:
    def test_zero_body_identity(self, rng):
        x = rng.random((4, 5, 5))
        block = ResidualBlock(_zero_conv(4, 4), _zero_conv(4, 4))
        np.testing.assert_array_equal(block_forward(block, x), x)

    def test_identity_projection(self, rng):
        x = rng.random((3, 4, 4))
        proj = ConvLayer(np.eye(3).reshape(3, 3, 1, 1), np.zeros(3))
        block = ResidualBlock(_zero_conv(3, 3), _zero_conv(3, 3), proj)
        np.testing.assert_allclose(block_forward(block, x), x, atol=0)

    def test_relu_clamp(self):
        block = ResidualBlock(_zero_conv(2, 2), _zero_conv(2, 2))
        assert not block_forward(block, -np.ones((2, 3, 3))).any()

    def test_identity_needs_matching_shapes(self):
        with pytest.raises(ShapeError):
            ResidualBlock(_zero_conv(2, 4), _zero_conv(4, 4))
        with pytest.raises(ShapeError):
            ResidualBlock(_zero_conv(2, 2, stride=2), _zero_conv(2, 2))

    def test_skip_passes_gradient(self, rng):
        x = rng.random((1, 3, 4, 4)) + 0.1
        block = ResidualBlock(_zero_conv(3, 3), _zero_conv(3, 3))
        _, cache = block_forward(block, x, return_cache=True)
        dy = rng.normal(size=x.shape)
        dx, _ = block_backward(block, dy, cache)
        np.testing.assert_array_equal(dx, dy)


class TestModel:
    def test_output_length(self, rng):
        model = TinyResNet.build(rng)
        assert model.forward(rng.normal(size=(2, 3, 16, 16))).shape == (2, 6)
        assert sum(b.shortcut == "projection" for b in model.blocks) == 2

    def test_default_init_predicts_uniform(self, rng):
        p = TinyResNet.build(rng).predict_proba(rng.normal(size=(1, 3, 8, 8)))
        np.testing.assert_allclose(p, 1 / 6)

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_check(self, seed):
        model, x, labels = gradcheck_model(seed)
        assert gradient_check(model, x, labels) < 1e-4

    def test_saturated_zero_loss(self, rng):
        model = TinyResNet.build(rng, stem_width=4, stages=((4, 1),))
        model.fc_biases[...] = [60, 0, 0, 0, 0, 0]
        loss, grads = loss_and_gradients(model, rng.normal(size=(1, 3, 5, 5)), [0])
        assert loss < 1e-12
        assert math.sqrt(sum((g ** 2).sum() for g in grads.values())) < 1e-6


class TestSoftmax:
    def test_uniform(self):
        loss, _ = softmax_xent(np.zeros(6), ClassLabel.TA)
        assert loss == pytest.approx(math.log(6))
        assert loss == pytest.approx(1.7918, abs=1e-4)

    def test_large_logit(self):
        loss, grad = softmax_xent([1000, 0, 0, 0, 0, 0], ClassLabel.HP)
        assert loss == pytest.approx(0, abs=1e-12)
        assert np.isfinite(grad).all()

    def test_gradient_sums_to_zero(self, rng):
        for _ in range(50):
            _, grad = softmax_xent(rng.normal(scale=5, size=6), rng.integers(6))
            assert abs(grad.sum()) < 1e-12

    def test_gradient_is_softmax_minus_onehot(self, rng):
        z = rng.normal(size=6)
        _, grad = softmax_xent(z, 2)
        np.testing.assert_allclose(grad, softmax(z) - np.eye(6)[2])


class TestOptim:
    def test_schedule(self):
        cfg = SGDConfig()
        assert lr_at(0, cfg) == pytest.approx(0.1)
        assert lr_at(50, cfg) == pytest.approx(0.01)
        assert lr_at(199, cfg) == pytest.approx(1e-4)
        rates = [lr_at(e, cfg) for e in range(cfg.epochs)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    @pytest.mark.parametrize("epoch", [-1, 200])
    def test_schedule_range(self, epoch):
        with pytest.raises(RangeError):
            lr_at(epoch, SGDConfig())

    def test_config_validation(self):
        with pytest.raises(RangeError):
            SGDConfig(initial_rate=0)
        with pytest.raises(RangeError):
            SGDConfig(epochs=0)

    def test_first_step(self):
        w, g = np.array([1.0, 2.0]), np.array([0.5, -1.0])
        w2, v2 = sgd_step(w, g, np.zeros(2), 0.1, 0.9)
        np.testing.assert_allclose(w2, w - 0.1 * g)
        np.testing.assert_allclose(v2, -0.1 * g)

    def test_geometric_decay(self):
        w, v = np.zeros(1), np.array([1.0])
        for t in range(1, 20):
            w, v = sgd_step(w, np.zeros(1), v, 0.1, 0.9)
            assert v[0] == pytest.approx(0.9 ** t)

    def test_zero_momentum(self):
        w2, _ = sgd_step(np.ones(3), np.full(3, 2.0), np.full(3, 5.0), 0.25, 0.0)
        np.testing.assert_allclose(w2, 0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sgd_step(np.ones(3), np.ones(2), np.zeros(3), 0.1, 0.9)


def _small_data():
    images, labels = color_blob_dataset(n_per_class=6, size=8)
    return images.astype(np.float64) / 255.0 - 0.5, labels


SMALL = dict(stem_width=4, stages=((4, 1), (6, 2)))


class TestTrain:
    def test_deterministic(self):
        x, y = _small_data()
        cfg = SGDConfig(epochs=3, batch_size=8)
        a = train(x, y, cfg, RandomStream(5), **SMALL)
        b = train(x, y, cfg, RandomStream(5), **SMALL)
        assert a.loss_history == b.loss_history
        assert len(a.loss_history) == 3

    def test_storage_order_invariant(self):
        x, y = _small_data()
        perm = np.random.default_rng(0).permutation(len(y))
        cfg = SGDConfig(epochs=3, batch_size=8)
        a = train(x, y, cfg, RandomStream(5), **SMALL)
        b = train(x[perm], y[perm], cfg, RandomStream(5), **SMALL)
        assert a.loss_history == b.loss_history
        for name, p in a.model.parameters().items():
            np.testing.assert_array_equal(p, b.model.parameters()[name])

    def test_validation_best_model(self):
        x, y = _small_data()
        res = train(x, y, SGDConfig(epochs=4, batch_size=8), RandomStream(1), validation=(x[:6], y[:6]), **SMALL)
        assert len(res.validation_history) == 4
        assert res.best_epoch == int(np.argmin(res.validation_history))
        assert res.best_model is not None

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            train([], [], SGDConfig(epochs=1))

    def test_inconsistent_shapes(self):
        with pytest.raises(ShapeError):
            train([np.zeros((4, 4, 3)), np.zeros((5, 4, 3))], [0, 1], SGDConfig(epochs=1))

    def test_label_count_mismatch(self):
        with pytest.raises(ShapeError):
            train(np.zeros((2, 4, 4, 3)), [0], SGDConfig(epochs=1))

    def test_loss_decreases(self):
        x, y = _small_data()
        res = train(x, y, SGDConfig(epochs=15, batch_size=8), RandomStream(0), **SMALL)
        assert res.loss_history[-1] < res.loss_history[0]


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        model = TinyResNet.build(rng, residual_gain=1.0, head_gain=1.0)
        path = tmp_path / "m.trn"
        checkpoint.save(path, model, {"note": "x"})
        loaded, meta = checkpoint.load(path)
        assert meta["note"] == "x"
        x = rng.normal(size=(1, 3, 8, 8))
        np.testing.assert_array_equal(loaded.forward(x), model.forward(x))
        assert path.read_bytes()[:4] == b"TRN1"

    def test_bad_magic(self, rng):
        data = checkpoint.dumps(TinyResNet.build(rng))
        with pytest.raises(CheckpointError):
            checkpoint.loads(b"XXXX" + data[4:])

    def test_truncated(self, rng):
        data = checkpoint.dumps(TinyResNet.build(rng))
        with pytest.raises(CheckpointError):
            checkpoint.loads(data[:-8])
        with pytest.raises(CheckpointError):
            checkpoint.loads(data + b"\0")

    def test_shape_mismatch(self, rng):
        data = checkpoint.dumps(TinyResNet.build(rng))
        other = TinyResNet.build(rng, stem_width=4)
        with pytest.raises(CheckpointError):
            checkpoint.loads(data, expected=other)
