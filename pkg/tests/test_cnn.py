import numpy as np
import pytest

from vcsflow.exceptions import ChannelMismatch
from vcsflow.models.cnn import (
    Block,
    CnnModel,
    ConvLayer,
    cnn_forward,
    cnn_gradients,
    conv1d_causal,
    leaky_relu,
    leaky_relu_grad,
    mse_loss,
)


def layer_from_weight(w, bias):
    """Layer whose effective weight is exactly ``w`` (g = ||v|| with v = w)."""
    w = np.asarray(w, dtype=float)
    return ConvLayer(w, np.sqrt(np.sum(w * w, axis=(1, 2))), bias)


def random_model(seed, in_channels=6, channels=16, kernel_size=4, n_blocks=3, bias_scale=0.5):
    rng = np.random.default_rng(seed)
    model = CnnModel.initialize(in_channels, channels, kernel_size, n_blocks, seed=seed)
    for _, layer in model.layers():
        layer.bias[:] = bias_scale * rng.normal(size=layer.bias.shape)
        layer.g[:] *= rng.uniform(0.5, 2.0, size=layer.g.shape)
    return model


def test_default_architecture():
    model = CnnModel.initialize()
    assert model.n_parameters == 2609
    assert abs(model.n_parameters - 2700) / 2700 < 0.05
    assert model.receptive_field == 10
    assert [l.n_parameters for _, l in model.layers()] == [400, 112, 1040, 1040, 17]
    assert model.blocks[1].skip is None and model.blocks[2].skip is None


def test_init_weight_equals_direction():
    model = CnnModel.initialize(seed=3)
    for _, layer in model.layers():
        np.testing.assert_allclose(layer.weight(), layer.v, rtol=1e-14)
        assert np.all(layer.bias == 0)
        bound = 1 / np.sqrt(layer.in_channels * layer.kernel_size)
        assert np.all(np.abs(layer.v) <= bound)


def test_conv_examples():
    one = layer_from_weight([[[1.0, 1.0]]], [0.0])
    np.testing.assert_allclose(conv1d_causal([[1.0, 2.0, 3.0]], one), [[1, 3, 5]])
    two = layer_from_weight([[[1.0], [1.0]]], [0.0])
    np.testing.assert_allclose(conv1d_causal([[1.0, 2.0], [3.0, 4.0]], two), [[4, 6]])
    flat = ConvLayer(np.ones((1, 2, 3)), [0.0], [0.5])
    x = np.random.default_rng(0).normal(size=(2, 7))
    np.testing.assert_array_equal(conv1d_causal(x, flat), np.full((1, 7), 0.5))


def test_conv_tap_order_is_past_first():
    # w[s] multiplies x[t - s]
    layer = layer_from_weight([[[0.0, 1.0]]], [0.0])
    np.testing.assert_allclose(conv1d_causal([[1.0, 2.0, 3.0]], layer), [[0, 1, 2]])


def test_conv_channel_mismatch():
    with pytest.raises(ChannelMismatch):
        conv1d_causal(np.zeros((3, 5)), layer_from_weight(np.ones((1, 2, 1)), [0.0]))
    with pytest.raises(ChannelMismatch):
        cnn_forward(CnnModel.initialize(), np.zeros((5, 20)))


def test_leaky_relu():
    np.testing.assert_allclose(leaky_relu([2.0, -2.0, 0.0]), [2.0, -0.2, 0.0])
    np.testing.assert_array_equal(leaky_relu_grad([1.0, -1.0, 0.0]), [1.0, 0.1, 1.0])


def test_zero_model_outputs_zero():
    model = CnnModel.initialize(seed=1)
    for _, layer in model.layers():
        layer.g[:] = 0.0
    x = np.random.default_rng(1).normal(size=(6, 40))
    assert np.all(cnn_forward(model, x) == 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_causality_bit_exact(seed):
    rng = np.random.default_rng(seed)
    model = random_model(seed)
    x = rng.normal(size=(6, 60))
    t0 = int(rng.integers(1, 60))
    y = cnn_forward(model, x)
    x2 = x.copy()
    x2[:, t0:] += rng.normal(size=(6, 60 - t0)) * 10
    y2 = cnn_forward(model, x2)
    assert np.array_equal(y[:t0], y2[:t0])


@pytest.mark.parametrize("seed", range(10))
def test_translation_bit_exact(seed):
    rng = np.random.default_rng(100 + seed)
    model = random_model(seed)
    rf, tau = model.receptive_field, 25
    x = np.concatenate([np.zeros((6, 12)), rng.normal(size=(6, 50))], axis=1)
    y = cnn_forward(model, x)
    ys = cnn_forward(model, np.concatenate([np.zeros((6, tau)), x], axis=1))
    # outputs that only see real input samples agree exactly
    assert np.array_equal(ys[tau + rf - 1:], y[rf - 1:])
    unbiased = random_model(seed, bias_scale=0.0)
    y = cnn_forward(unbiased, x)
    ys = cnn_forward(unbiased, np.concatenate([np.zeros((6, tau)), x], axis=1))
    assert np.array_equal(ys[tau:], y)


@pytest.mark.parametrize("seed", range(5))
def test_permutation_insensitivity(seed):
    rng = np.random.default_rng(200 + seed)
    model = random_model(seed)
    x = rng.normal(size=(6, 40))
    perm = rng.permutation(6)
    permuted = model.copy()
    permuted.blocks[0].conv.v = permuted.blocks[0].conv.v[:, perm, :].copy()
    permuted.blocks[0].skip.v = permuted.blocks[0].skip.v[:, perm, :].copy()
    y = cnn_forward(model, x)
    yp = cnn_forward(permuted, x[perm])
    assert np.max(np.abs(yp - y)) <= 1e-12 * np.max(np.abs(y))
    assert np.array_equal(cnn_forward(permuted, x[perm], channel_order=np.argsort(perm)), y)


def test_weight_norm_invariants():
    layer = random_model(4).blocks[1].conv
    w = layer.weight()
    np.testing.assert_allclose(np.sqrt(np.sum(w * w, axis=(1, 2))), np.abs(layer.g), rtol=0, atol=1e-12)
    scaled = ConvLayer(layer.v * 7.3, layer.g, layer.bias)
    np.testing.assert_allclose(scaled.weight(), w, rtol=1e-14, atol=1e-15)
    with pytest.raises(ValueError):
        ConvLayer(np.zeros((1, 1, 2)), [1.0], [0.0]).weight()


def finite_difference_check(model, x, target, loss_start=0, step=1e-6):
    _, grads = cnn_gradients(model, x, target, loss_start)
    worst = 0.0
    for name, p in model.parameters().items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            up = mse_loss(model, x, target, loss_start)
            p[idx] = old - step
            down = mse_loss(model, x, target, loss_start)
            p[idx] = old
            fd = (up - down) / (2 * step)
            an = grads[name][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(300 + seed)
    model = random_model(seed, in_channels=3, channels=4, kernel_size=3, n_blocks=2, bias_scale=0.3)
    x, target = rng.normal(size=(3, 32)), rng.normal(size=32)
    assert finite_difference_check(model, x, target, loss_start=seed) < 1e-5


def test_head_bias_gradient_closed_form():
    rng = np.random.default_rng(5)
    model = random_model(5, in_channels=3, channels=4, kernel_size=3, n_blocks=2)
    x, target = rng.normal(size=(3, 32)), rng.normal(size=32)
    _, grads = cnn_gradients(model, x, target)
    residual = cnn_forward(model, x) - target
    assert grads["head.bias"][0] == pytest.approx(2 / 32 * residual.sum(), rel=1e-12)


def test_perfect_fit_zero_gradients():
    rng = np.random.default_rng(6)
    model = random_model(6)
    x = rng.normal(size=(6, 30))
    loss, grads = cnn_gradients(model, x, cnn_forward(model, x))
    assert loss == 0.0
    assert all(np.max(np.abs(g)) <= 1e-12 for g in grads.values())


def test_model_file_round_trip(tmp_path):
    model = random_model(7)
    model.save(tmp_path / "m.json", {"seed": 7})
    back = CnnModel.load(tmp_path / "m.json")
    x = np.random.default_rng(7).normal(size=(6, 30))
    assert np.array_equal(cnn_forward(back, x), cnn_forward(model, x))
    assert back.n_parameters == 2609


def test_architecture_validation():
    conv = ConvLayer.initialize(6, 16, 4, np.random.default_rng(0))
    head = ConvLayer.initialize(16, 1, 1, np.random.default_rng(1))
    with pytest.raises(ChannelMismatch):
        CnnModel([Block(conv, None)], head)
