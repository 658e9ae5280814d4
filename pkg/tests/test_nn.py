import math

import numpy as np
import pytest

from mea.errors import FormatError, InvalidArgument, StateError
from mea.nn import (BatchNorm2d, Checkpoint, Conv2d, Dense, ParamStore, ReLU, Sequential, Swish,
                    UpsampleTo, adam_step, concat_channels, conv2d_forward, count_params,
                    dense_forward, mse_loss, swish, upsample_forward)
from mea.nn import functional as F
from mea.nn.gradcheck import check_layer, numeric_grad, relative_error
from mea.nn.network import Network


def test_conv_hand_oracle():
    out, _ = conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1), 1, 1)
    np.testing.assert_array_equal(out[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 3, 7, 7))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out, _ = conv2d_forward(x, w, np.zeros(3), 1, 1)
    np.testing.assert_array_equal(out, x)


@pytest.mark.parametrize("size,stride,pad,expected", [(101, 2, 1, 51), (51, 2, 1, 26), (26, 2, 1, 13),
                                                      (13, 1, 0, 11), (11, 1, 1, 11)])
def test_conv_output_sizes(size, stride, pad, expected):
    out, _ = conv2d_forward(np.zeros((1, 1, size, size)), np.zeros((2, 1, 3, 3)), np.zeros(2), stride, pad)
    assert out.shape == (1, 2, expected, expected)


def test_conv_shape_errors():
    with pytest.raises(InvalidArgument):
        conv2d_forward(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)), None)
    with pytest.raises(InvalidArgument):
        conv2d_forward(np.zeros((1, 1, 5, 5)), np.zeros((1, 1, 5, 5)), None)
    with pytest.raises(InvalidArgument):
        conv2d_forward(np.zeros((1, 1, 5, 5)), np.zeros((1, 1, 3, 3)), None, stride=3)
    with pytest.raises(InvalidArgument):
        conv2d_forward(np.zeros((1, 5, 5)), np.zeros((1, 1, 3, 3)), None)


def test_dense_identity_and_swish_values():
    x = np.arange(6.0).reshape(2, 3)
    out, _ = dense_forward(x, np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(out, x)
    assert swish(np.array([0.0]))[0] == 0.0
    assert swish(np.array([1.0]))[0] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-12)
    assert np.isfinite(swish(np.array([-1000.0, 1000.0]))).all()
    with pytest.raises(InvalidArgument):
        dense_forward(x, np.eye(4), np.zeros(4))


def test_relu_negative_zero_grad():
    r = ReLU()
    r.forward(np.array([[-1.0, 2.0]]), training=True)
    np.testing.assert_array_equal(r.backward(np.ones((1, 2))), [[0.0, 1.0]])


def test_mse_properties(rng):
    a = rng.standard_normal((3, 4))
    loss, g = mse_loss(a, a.copy())
    assert loss == 0.0 and not g.any()
    loss, _ = mse_loss(a, a + 0.1)
    assert loss == pytest.approx(0.01)
    with pytest.raises(InvalidArgument):
        mse_loss(a, a[:2])


def _shapes(rng, k=10):
    return [(int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(3, 7)),
             int(rng.integers(3, 7))) for _ in range(k)]


def _max_err(errors):
    return max(errors.values())


def test_gradcheck_conv(rng):
    for b, c, h, w in _shapes(rng):
        store = ParamStore(np.float64)
        stride = int(rng.integers(1, 3))
        pad = 1 if stride == 2 else int(rng.integers(0, 2))
        if pad == 0 and min(h, w) < 3:
            pad = 1
        layer = Conv2d(store, "c", c, int(rng.integers(1, 4)), rng, stride, pad)
        store.params["c.bias"].value[:] = rng.standard_normal(layer.c_out)
        assert _max_err(check_layer(layer, store, rng.standard_normal((b, c, h, w)), rng)) <= 1e-4


def test_gradcheck_dense(rng):
    for _ in range(10):
        store = ParamStore(np.float64)
        n_in, n_out = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        layer = Dense(store, "d", n_in, n_out, rng)
        x = rng.standard_normal((int(rng.integers(1, 5)), n_in))
        assert _max_err(check_layer(layer, store, x, rng)) <= 1e-4


def test_gradcheck_batchnorm(rng):
    for b, c, h, w in _shapes(rng):
        store = ParamStore(np.float64)
        layer = BatchNorm2d(store, "bn", c)
        store.params["bn.weight"].value[:] = 0.5 + rng.random(c)
        store.params["bn.bias"].value[:] = rng.standard_normal(c)
        assert _max_err(check_layer(layer, store, rng.standard_normal((b, c, h, w)), rng)) <= 1e-4


@pytest.mark.parametrize("make", [ReLU, Swish])
def test_gradcheck_activations(rng, make):
    for shape in _shapes(rng):
        x = rng.standard_normal(shape)
        x[np.abs(x) < 1e-3] = 0.1  # keep ReLU away from its kink
        assert _max_err(check_layer(make(), None, x, rng)) <= 1e-4


def test_gradcheck_upsample(rng):
    for b, c, h, w in _shapes(rng):
        layer = UpsampleTo((h + int(rng.integers(0, 6)), w + int(rng.integers(0, 6))))
        assert _max_err(check_layer(layer, None, rng.standard_normal((b, c, h, w)), rng)) <= 1e-4


def test_gradcheck_concat_and_mse(rng):
    for b, c, h, w in _shapes(rng):
        a = rng.standard_normal((b, c, h, w))
        other = rng.standard_normal((b, 2, h, w))
        r = rng.standard_normal((b, c + 2, h, w))
        f = lambda: float(np.sum(r * concat_channels(a, other)))  # noqa: E731
        da, _ = F.split_channels(r, c)
        assert relative_error(da, numeric_grad(f, a)) <= 1e-4
        t = rng.standard_normal((b, c, h, w))
        _, g = mse_loss(a, t)
        assert relative_error(g, numeric_grad(lambda: mse_loss(a, t)[0], a)) <= 1e-4


def test_gradcheck_composite(rng):
    store = ParamStore(np.float64)
    net = Sequential([Conv2d(store, "c0", 2, 3, rng), BatchNorm2d(store, "b0", 3), ReLU(),
                      UpsampleTo(7), Conv2d(store, "c1", 3, 1, rng, 2, 1)])
    errors = check_layer(net, store, rng.standard_normal((2, 2, 5, 5)), rng)
    # a bias feeding batchnorm has an identically zero gradient; relative error is meaningless there
    assert np.abs(store.params["c0.bias"].grad).max() < 1e-12
    del errors["c0.bias"]
    assert _max_err(errors) <= 1e-4


def test_batchnorm_statistics(rng):
    store = ParamStore(np.float64)
    bn = BatchNorm2d(store, "bn", 3)
    x = 3 + 2 * rng.standard_normal((4, 3, 5, 5))
    out = bn.forward(x, training=True)
    assert np.abs(out.mean(axis=(0, 2, 3))).max() <= 1e-6
    assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() <= 1e-4
    const = bn.forward(np.full((2, 3, 4, 4), 7.0), training=True)
    assert np.isfinite(const).all() and np.abs(const).max() == 0.0
    assert bn.tracked[0] == 2
    m = 4 * 25
    expected_rm = 0.9 * 0.1 * x.mean(axis=(0, 2, 3)) + 0.1 * 7.0
    np.testing.assert_allclose(bn.rm, expected_rm)
    expected_rv = 0.9 * (0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1)) + 0.1 * 0.0
    np.testing.assert_allclose(bn.rv, expected_rv)


def test_batchnorm_eval_requires_training_and_tiny_batch():
    store = ParamStore(np.float64)
    bn = BatchNorm2d(store, "bn", 2)
    with pytest.raises(StateError):
        bn.forward(np.zeros((1, 2, 3, 3)), training=False)
    with pytest.raises(InvalidArgument):
        bn.forward(np.zeros((1, 2, 1, 1)), training=True)


def test_backward_before_forward():
    store = ParamStore(np.float64)
    rng = np.random.default_rng(0)
    for layer in (Conv2d(store, "c", 1, 1, rng), Dense(store, "d", 2, 2, rng), ReLU(), Swish(),
                  UpsampleTo(5), BatchNorm2d(store, "bn", 1)):
        with pytest.raises(StateError):
            layer.backward(np.zeros((1, 1, 3, 3)))


def test_upsample_examples():
    x = np.full((1, 1, 11, 11), 0.4)
    sizes = []
    for s in (13, 26, 51, 101):
        x, _ = upsample_forward(x, s)
        sizes.append(x.shape[-1])
    assert sizes == [13, 26, 51, 101]
    assert np.allclose(x, 0.4)
    ramp = np.tile(np.linspace(0, 1, 11), (11, 1))[None, None]
    up, _ = upsample_forward(ramp, 101)
    assert np.abs(up[0, 0] - np.tile(np.linspace(0, 1, 101), (101, 1))).max() <= 1e-6
    with pytest.raises(InvalidArgument):
        upsample_forward(np.zeros((1, 1, 13, 13)), 11)


def test_concat_examples(rng):
    a = rng.standard_normal((2, 128, 13, 13))
    b = rng.standard_normal((2, 1, 13, 13))
    out = concat_channels(a, b)
    assert out.shape == (2, 129, 13, 13)
    np.testing.assert_array_equal(out[:, :128], a)
    np.testing.assert_array_equal(concat_channels(a, np.zeros((2, 0, 13, 13))), a)
    with pytest.raises(InvalidArgument):
        concat_channels(a, np.zeros((2, 1, 12, 12)))


def test_adam_examples():
    s = ParamStore(np.float64)
    s.add("p", np.zeros(1))
    adam_step(s, {"p": np.ones(1)}, lr=1e-4)
    assert s["p"][0] == pytest.approx(-1e-4, rel=1e-6)
    assert s.t == 1
    before = s["p"].copy()
    adam_step(s, {"p": np.zeros(1)}, lr=1e-4)
    assert s.t == 2
    # a zero gradient still moves the parameter through the first moment
    assert s["p"][0] != before[0]
    z = ParamStore(np.float64)
    z.add("q", np.ones(2))
    adam_step(z, {"q": np.zeros(2)})
    np.testing.assert_array_equal(z["q"], [1.0, 1.0])
    assert z.t == 1
    with pytest.raises(InvalidArgument):
        adam_step(z, {})
    with pytest.raises(InvalidArgument):
        adam_step(z, {"q": np.zeros(3)})


def test_adam_deterministic(rng):
    g = {"w": rng.standard_normal((3, 3))}
    stores = []
    for _ in range(2):
        s = ParamStore(np.float32)
        s.add("w", np.ones((3, 3)))
        for _ in range(5):
            adam_step(s, g)
        stores.append(s)
    np.testing.assert_array_equal(stores[0]["w"], stores[1]["w"])


def test_count_params():
    rng = np.random.default_rng(0)
    s = ParamStore()
    assert count_params(s) == 0
    Conv2d(s, "c", 1, 128, rng)
    assert count_params(s) == 1280
    BatchNorm2d(s, "bn", 128)
    assert count_params(s) == 1280 + 256
    d = ParamStore()
    for i, (a, b) in enumerate([(121, 1000), (1000, 5000), (5000, 10201)]):
        d.add(f"w{i}", np.zeros((b, a), np.float32))
        d.add(f"b{i}", np.zeros(b, np.float32))
    assert count_params(d) == 56_142_201


def test_duplicate_names_rejected():
    s = ParamStore()
    s.add("a", np.zeros(1))
    with pytest.raises(InvalidArgument):
        s.add("a", np.zeros(1))
    with pytest.raises(InvalidArgument):
        s.add_buffer("a", np.zeros(1))


class _Tiny(Network):
    kind = "tiny-test"

    def build(self, rng):
        self.net = Sequential([Conv2d(self.store, "c", 1, 2, rng), BatchNorm2d(self.store, "bn", 2),
                               ReLU()])

    def forward(self, x, training=False):
        return self._guard(self.net.forward(x, training))


def test_checkpoint_roundtrip_bitwise(tmp_path, rng):
    net = _Tiny({"seed": 3})
    x = rng.standard_normal((2, 1, 5, 5)).astype(np.float32)
    net.forward(x, training=True)
    out = net.forward(x)
    ck = net.checkpoint(epoch=4, lr=1e-4, seed=3, dataset_hash="abc")
    p = tmp_path / "m.meac"
    ck.save(p)
    loaded = Checkpoint.load(p)
    assert loaded.kind == "tiny-test" and loaded.meta["epoch"] == 4
    assert loaded.to_bytes() == p.read_bytes()
    net2 = Network.from_checkpoint(loaded)
    np.testing.assert_array_equal(net2.forward(x), out)
    assert Network.from_checkpoint(loaded).checkpoint(epoch=4, lr=1e-4, seed=3,
                                                      dataset_hash="abc").to_bytes() == ck.to_bytes()


def test_checkpoint_errors(rng):
    raw = _Tiny({"seed": 0}).checkpoint().to_bytes()
    for bad in (b"XXXX" + raw[4:], raw[:-3], raw + b"\0", raw[:10]):
        with pytest.raises(FormatError):
            Checkpoint.from_bytes(bad)
    ck = Checkpoint.from_bytes(raw)
    ck.kind = "nope"
    with pytest.raises(InvalidArgument):
        Network.from_checkpoint(ck)


def test_forward_determinism_and_nan_guard(rng):
    net = _Tiny({"seed": 1})
    x = rng.standard_normal((2, 1, 6, 6)).astype(np.float32)
    a = net.forward(x, training=True)
    net2 = _Tiny({"seed": 1})
    np.testing.assert_array_equal(a, net2.forward(x, training=True))
    from mea.errors import NumericalFailure
    x[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericalFailure):
        net.forward(x, training=True)
