import numpy as np
import pytest

from mea.errors import InvalidArgument
from mea.fields import ScalarField
from mea.models import (DECODER_SIZES, FFNN, MEA, InterpUpscaler, LossHistory, PairSet, TrainConfig,
                        UNet, build_mea, build_model, build_unet, predict_high, split_pairs,
                        train_upscaler, upscale_interp)
from mea.nn.checkpoint import Checkpoint
from mea.nn.network import Network

# frozen from the constructed graphs
PARAMS = {"mea2": 149_689, "mea1": 739_729, "unet": 1_273_729, "ffnn": 56_142_201}


@pytest.mark.parametrize("kind", ["mea2", "mea1", "unet"])
def test_param_counts(kind):
    assert build_model(kind).num_params() == PARAMS[kind]


def test_ffnn_param_count_and_ordering():
    m = build_model("ffnn")
    assert m.num_params() == PARAMS["ffnn"]
    assert PARAMS["mea2"] < PARAMS["mea1"] < PARAMS["unet"] < PARAMS["ffnn"]
    out = m.forward(np.random.default_rng(0).random((2, 11, 11)), training=False)
    assert out.shape == (2, 101, 101)


def test_strategy_changes_only_input_channels():
    counts = [build_mea(1, s).num_params() for s in (1, 2, 3, 4)]
    # each extra k channel adds one 3 x 3 input plane to the first conv of a stage
    assert np.diff(counts).tolist() == [9 * 32, 9 * 16, 9 * 8]


@pytest.mark.parametrize("bad", [0, 5, "4"])
def test_invalid_strategy(bad):
    with pytest.raises(InvalidArgument):
        build_mea(1, bad)


def test_invalid_kind_and_type():
    with pytest.raises(InvalidArgument):
        build_model("resnet")
    with pytest.raises(InvalidArgument):
        build_mea(3)


def _pairs(rng, count=3):
    k = np.where(rng.random((count, 101, 101)) < 0.4, 0.1, 1.0)
    return PairSet.from_fields(k, rng.random((count, 11, 11)), rng.random((count, 101, 101)))


@pytest.mark.parametrize("strategy", [1, 2, 3, 4])
def test_mea_trace_shapes(rng, strategy):
    m = build_mea(1, strategy)
    p = _pairs(rng)
    trace = []
    out = m.forward(*m.inputs(p), training=True, trace=trace)
    assert out.shape == (3, 101, 101)
    shapes = dict((name, a.shape) for name, a in trace)
    assert shapes["encoder"] == (3, 128, 11, 11)
    for i, (size, c) in enumerate(zip(DECODER_SIZES, (128, 64, 32, 16))):
        assert shapes[f"stage{size}"] == (3, c + (i < strategy), size, size)


def test_concat_order_decoder_first_k_last(rng):
    m = build_mea(2, 4)
    p = _pairs(rng)
    trace = []
    m.forward(*m.inputs(p), training=True, trace=trace)
    for name, a in trace:
        if name.startswith("stage"):
            size = int(name[5:])
            np.testing.assert_array_equal(a[:, -1:], m.normalize_k(p.k[size]))


def test_normalize_k_range():
    m = build_mea(2)
    z = m.normalize_k(np.array([[[0.1, 1.0], [0.55, 1.0]]]))
    np.testing.assert_allclose(z[0, 0], [[0.0, 1.0], [0.5, 1.0]], atol=1e-7)


def test_unet_trace(rng):
    m = build_unet()
    p = _pairs(rng, 2)
    trace = []
    assert m.forward(*m.inputs(p), training=True, trace=trace).shape == (2, 101, 101)
    shapes = dict((n, a.shape) for n, a in trace)
    assert shapes["bottleneck"] == (2, 128, 11, 11)
    assert shapes["stage13"][1] == 256 and shapes["stage26"][1] == 192
    assert shapes["stage51"][1] == 96 and shapes["stage101"][1] == 48


def test_interp_upscaler(rng):
    t = ScalarField.from_function(11, lambda x, y: 1 - x)
    up = upscale_interp(t)
    assert up.n == 101
    exact = ScalarField.from_function(101, lambda x, y: 1 - x).values
    # clamped-border cubic is exact for linears once the stencil leaves the edge intervals
    np.testing.assert_allclose(up.values[:, 10:91], exact[:, 10:91], atol=1e-12)
    np.testing.assert_allclose(upscale_interp(t, order=1).values, exact, atol=1e-12)
    with pytest.raises(InvalidArgument):
        upscale_interp(ScalarField.constant(13, 1.0))
    p = _pairs(rng)
    assert InterpUpscaler(1).predict(p).shape == (3, 101, 101)


def test_split_pairs_disjoint():
    tr, va = split_pairs(100, 0.8, 3)
    assert tr.size == 80 and va.size == 20 and not set(tr) & set(va)
    tr1, va1 = split_pairs(1, 0.8, 0)
    assert tr1.tolist() == va1.tolist() == [0]


def test_training_reduces_val_loss_and_is_reproducible(small_pairs, tmp_path):
    cfg = TrainConfig(lr=3e-4, epochs=6, batch=8, seed=2)
    m = build_model("mea2", seed=2)
    ck, hist = train_upscaler(m, small_pairs, cfg, dataset_hash="abc")
    assert hist.val_mse[-1] < hist.val_mse[0] and hist.train_mse[-1] < hist.train_mse[0]
    assert ck.meta["dataset_hash"] == "abc" and ck.meta["best_val_mse"] == min(hist.val_mse)
    m2 = build_model("mea2", seed=2)
    ck2, hist2 = train_upscaler(m2, small_pairs, cfg, dataset_hash="abc")
    assert hist.val_mse == hist2.val_mse
    assert ck.to_bytes() == ck2.to_bytes()
    hist.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_mse,val_mse" and len(lines) == 7


def test_predict_deterministic_and_checkpoint_roundtrip(small_pairs, tmp_path):
    m = build_model("mea1", seed=1)
    m.forward(*m.inputs(small_pairs.subset(np.arange(4))), training=True)
    a = m.predict(small_pairs)
    np.testing.assert_array_equal(a, m.predict(small_pairs))
    m.checkpoint().save(tmp_path / "m.meac")
    ck = Checkpoint.load(tmp_path / "m.meac")
    np.testing.assert_array_equal(np.stack([f.values for f in predict_high(ck, small_pairs)]), a)
    assert isinstance(MEA.from_checkpoint(ck), MEA)
    with pytest.raises(InvalidArgument):
        UNet.from_checkpoint(ck)
    with pytest.raises(InvalidArgument):
        FFNN.from_checkpoint(ck)


def test_predict_needs_levels(small_pairs):
    m = build_model("unet")
    p = PairSet(small_pairs.coarse_T, {11: small_pairs.k[11]}, None)
    with pytest.raises(InvalidArgument):
        predict_high(m, p)
    with pytest.raises(InvalidArgument):
        predict_high(object(), p)


def test_train_errors(small_pairs):
    with pytest.raises(InvalidArgument):
        train_upscaler(build_model("mea2"), PairSet(small_pairs.coarse_T, small_pairs.k, None))
    with pytest.raises(InvalidArgument):
        train_upscaler(InterpUpscaler(), small_pairs)
    with pytest.raises(InvalidArgument):
        TrainConfig(train_fraction=0.0)
    assert TrainConfig.for_kind("ffnn").batch == 100 and TrainConfig.for_kind("mea1").batch == 50


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_training_failure(small_pairs):
    from mea.errors import TrainingFailure
    with pytest.raises(TrainingFailure) as exc:
        train_upscaler(build_model("mea2"), small_pairs, TrainConfig(lr=1e12, epochs=3, batch=8))
    assert exc.value.last_good.kind == "mea2"


def test_translation_spot_check(rng):
    # convolutional features shift with the input away from the borders
    m = build_mea(2, 1)
    p = _pairs(rng, 4)
    m.forward(*m.inputs(p), training=True)
    x = np.zeros((1, 11, 11))
    x[0, 4, 4] = 1.0
    y = np.roll(x, 1, axis=2)
    ex = m.encoder.forward(x[:, None].astype(np.float32), False)
    ey = m.encoder.forward(y[:, None].astype(np.float32), False)
    np.testing.assert_allclose(ey[..., 3:8, 4:9], ex[..., 3:8, 3:8], atol=1e-6)


def test_registry_dispatch():
    ck = build_model("unet").checkpoint()
    assert isinstance(Network.from_checkpoint(ck), UNet)
    assert isinstance(LossHistory().rows(), list)


def test_memorises_a_training_sample(small_labelled):
    from mea.pipeline import make_pairs
    one = make_pairs(small_labelled.subset([4]))
    m = build_model("mea2", seed=0)
    train_upscaler(m, one, TrainConfig(lr=1e-3, epochs=300, batch=1, train_fraction=1.0))
    pred = predict_high(m, one)[0].values
    assert np.isfinite(pred).all()
    assert np.abs(pred - one.target[0]).mean() <= 0.02
