"""Upscalers from the coarse 11 x 11 solution to the 101 x 101 field.

``interp`` resamples the coarse solution, ``ffnn`` is a dense network on the
flattened coarse field, ``mea1``/``mea2`` are convolutional autoencoders whose
decoder re-injects the condensed conductivity maps, and ``unet`` maps the
fine conductivity map straight to temperature.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, NumericalFailure, TrainingFailure
from .fields import WINDOWS, ScalarField, condense_max, resample
from .microgen import K_IN, K_OUT
from .nn import functional as F
from .nn.checkpoint import Checkpoint
from .nn.layers import Conv2d, Dense, Sequential, Swish, UpsampleTo, conv_bn_relu
from .nn.network import Network
from .nn.params import adam_step

log = logging.getLogger(__name__)

KINDS = ("interp", "ffnn", "mea1", "mea2", "unet")
TRAINABLE = ("ffnn", "mea1", "mea2", "unet")
DECODER_SIZES = (13, 26, 51, 101)
MEA1_ENCODER = (1, 8, 8, 16, 16, 32, 32, 64, 64, 128, 128, 128, 128)
MEA_DECODER = (64, 32, 16, 8)


# -- data -------------------------------------------------------------------

@dataclass
class PairSet:
    """Aligned arrays for supervised upscaling.

    ``coarse_T`` is the low-fidelity solution at 11 x 11, ``k`` maps each
    resolution to a ``(N, n, n)`` conductivity stack and ``target`` holds the
    fine FEM temperatures (absent at inference time).
    """

    coarse_T: np.ndarray
    k: dict[int, np.ndarray]
    target: np.ndarray | None = None
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = self.coarse_T.shape[0]
        for res, arr in self.k.items():
            if arr.shape != (n, res, res):
                raise InvalidArgument(f"k[{res}] has shape {arr.shape}, expected {(n, res, res)}")
        if self.target is not None and self.target.shape != (n, 101, 101):
            raise InvalidArgument(f"target shape {self.target.shape} != {(n, 101, 101)}")

    def __len__(self):
        return self.coarse_T.shape[0]

    def subset(self, idx) -> "PairSet":
        idx = np.asarray(idx)
        return PairSet(self.coarse_T[idx], {r: a[idx] for r, a in self.k.items()},
                       None if self.target is None else self.target[idx],
                       [self.ids[i] for i in idx] if self.ids else [])

    @classmethod
    def from_fields(cls, k101: np.ndarray, coarse_T: np.ndarray, target=None, ids=None):
        """Build the condensed stacks from ``(N, 101, 101)`` conductivities."""
        k101 = np.asarray(k101, dtype=np.float64)
        k = {101: k101}
        for res, w in WINDOWS.items():
            k[res] = np.stack([condense_max(ScalarField(f), w).values for f in k101]) \
                if len(k101) else np.zeros((0, res, res))
        return cls(np.asarray(coarse_T, dtype=np.float64), k,
                   None if target is None else np.asarray(target, dtype=np.float64), ids or [])


# -- networks ---------------------------------------------------------------

class Upscaler(Network):
    """Common surface: ``inputs(pairs)`` picks what the network consumes."""

    def normalize_k(self, k: np.ndarray) -> np.ndarray:
        lo = self.config.get("k_lo", min(K_IN, K_OUT))
        hi = self.config.get("k_hi", max(K_IN, K_OUT))
        return ((k - lo) / (hi - lo)).astype(self.dtype)[:, None]

    def inputs(self, pairs: PairSet):
        raise NotImplementedError

    def predict(self, pairs: PairSet, batch: int = 50) -> np.ndarray:
        out = []
        for s in range(0, len(pairs), batch):
            sub = pairs.subset(np.arange(s, min(len(pairs), s + batch)))
            out.append(self.forward(*self.inputs(sub)).astype(np.float64))
        return np.concatenate(out) if out else np.zeros((0, 101, 101))


class FFNN(Upscaler):
    kind = "ffnn"

    def build(self, rng):
        sizes = self.config.setdefault("sizes", [121, 1000, 5000, 10201])
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            layers.append(Dense(self.store, f"fc{i}", a, b, rng))
            if i < len(sizes) - 2:
                layers.append(Swish())
        self.net = Sequential(layers)

    def inputs(self, pairs):
        return (pairs.coarse_T,)

    def forward(self, coarse_T, training=False):
        x = np.asarray(coarse_T, dtype=self.dtype).reshape(coarse_T.shape[0], -1)
        out = self.net.forward(x, training)
        return self._guard(out.reshape(-1, 101, 101))

    def backward(self, dout):
        return self.net.backward(dout.reshape(dout.shape[0], -1))


class MEA(Upscaler):
    """Type 1: twelve-conv encoder. Type 2: a single 1 -> 128 conv encoder."""

    def build(self, rng):
        cfg = self.config
        mtype = cfg.setdefault("type", 1 if self.kind == "mea1" else 2)
        strategy = cfg.setdefault("concat", 4)
        if strategy not in (1, 2, 3, 4):
            raise InvalidArgument(f"concat strategy must be 1-4, got {strategy!r}")
        st = self.store
        chans = MEA1_ENCODER if mtype == 1 else (1, 128)
        self.encoder = Sequential(conv_bn_relu(st, f"enc{i}", a, b, rng)
                                  for i, (a, b) in enumerate(zip(chans[:-1], chans[1:])))
        self.ups = [UpsampleTo(s) for s in DECODER_SIZES]
        self.concat = [i < strategy for i in range(4)]
        self.stages = []
        c = chans[-1]
        for i, (size, c_out) in enumerate(zip(DECODER_SIZES, MEA_DECODER)):
            c_in = c + (1 if self.concat[i] else 0)
            if size == 101:
                stage = Sequential([conv_bn_relu(st, f"dec{i}.0", c_in, c_out, rng),
                                    Conv2d(st, "head", c_out, 1, rng)])
            else:
                stage = Sequential([conv_bn_relu(st, f"dec{i}.0", c_in, c_out, rng),
                                    conv_bn_relu(st, f"dec{i}.1", c_out, c_out, rng)])
            self.stages.append(stage)
            c = c_out
        self._split = []

    def inputs(self, pairs):
        return pairs.coarse_T, {r: pairs.k[r] for r in DECODER_SIZES}

    def forward(self, coarse_T, k_levels, training=False, trace=None):
        h = np.asarray(coarse_T, dtype=self.dtype)[:, None]
        h = self.encoder.forward(h, training)
        if trace is not None:
            trace.append(("encoder", h))
        self._split = []
        for i, size in enumerate(DECODER_SIZES):
            h = self.ups[i].forward(h, training)
            if self.concat[i]:
                self._split.append(h.shape[1])
                h = F.concat_channels(h, self.normalize_k(k_levels[size]))
            else:
                self._split.append(None)
            if trace is not None:
                trace.append((f"stage{size}", h))
            h = self.stages[i].forward(h, training)
        return self._guard(h[:, 0])

    def backward(self, dout):
        d = dout[:, None]
        for i in reversed(range(4)):
            d = self.stages[i].backward(d)
            if self._split[i] is not None:
                d, _ = F.split_channels(d, self._split[i])
            d = self.ups[i].backward(d)
        return self.encoder.backward(d)


class MEA1(MEA):
    kind = "mea1"


class MEA2(MEA):
    kind = "mea2"


class UNet(Upscaler):
    kind = "unet"
    ENC = (16, 32, 64, 128)
    DEC = (128, 64, 32, 16)

    def build(self, rng):
        st = self.store
        e = self.ENC
        self.blocks = [
            Sequential([conv_bn_relu(st, "e101.0", 1, e[0], rng),
                        conv_bn_relu(st, "e101.1", e[0], e[0], rng)]),
        ]
        for i in range(1, 4):
            self.blocks.append(Sequential([
                conv_bn_relu(st, f"down{i}", e[i - 1], e[i], rng, stride=2),
                conv_bn_relu(st, f"e{i}.0", e[i], e[i], rng),
                conv_bn_relu(st, f"e{i}.1", e[i], e[i], rng)]))
        self.bottleneck = conv_bn_relu(st, "bottleneck", e[3], e[3], rng, padding=0)
        self.ups = [UpsampleTo(s) for s in DECODER_SIZES]
        self.stages = []
        c = e[3]
        for i, c_out in enumerate(self.DEC):
            skip = e[3 - i]
            self.stages.append(Sequential([
                conv_bn_relu(st, f"dec{i}.0", c + skip, c_out, rng),
                conv_bn_relu(st, f"dec{i}.1", c_out, c_out, rng)]))
            c = c_out
        self.head = Conv2d(st, "head", c, 1, rng)
        self._split = []

    def inputs(self, pairs):
        return (pairs.k[101],)

    def forward(self, k101, training=False, trace=None):
        h = self.normalize_k(np.asarray(k101))
        skips = []
        for blk in self.blocks:
            h = blk.forward(h, training)
            skips.append(h)
            if trace is not None:
                trace.append((f"enc{h.shape[-1]}", h))
        h = self.bottleneck.forward(h, training)
        if trace is not None:
            trace.append(("bottleneck", h))
        self._split = []
        for i in range(4):
            h = self.ups[i].forward(h, training)
            self._split.append(h.shape[1])
            h = F.concat_channels(h, skips[3 - i])
            if trace is not None:
                trace.append((f"stage{DECODER_SIZES[i]}", h))
            h = self.stages[i].forward(h, training)
        return self._guard(self.head.forward(h, training)[:, 0])

    def backward(self, dout):
        d = self.head.backward(dout[:, None])
        dskips = [None] * 4
        for i in reversed(range(4)):
            d = self.stages[i].backward(d)
            d, dskips[3 - i] = F.split_channels(d, self._split[i])
            d = self.ups[i].backward(d)
        d = self.bottleneck.backward(d)
        for j in reversed(range(4)):
            d = d + dskips[j]
            d = self.blocks[j].backward(d)
        return d


def build_ffnn(seed: int = 0, dtype=np.float32) -> FFNN:
    return FFNN({"seed": seed}, dtype)


def build_mea(mtype: int = 1, concat_strategy: int = 4, seed: int = 0, dtype=np.float32,
              k_lo: float = min(K_IN, K_OUT), k_hi: float = max(K_IN, K_OUT)) -> MEA:
    if mtype not in (1, 2):
        raise InvalidArgument(f"MEA type must be 1 or 2, got {mtype!r}")
    if concat_strategy not in (1, 2, 3, 4):
        raise InvalidArgument(f"concat strategy must be 1-4, got {concat_strategy!r}")
    cls = MEA1 if mtype == 1 else MEA2
    return cls({"type": mtype, "concat": concat_strategy, "seed": seed,
                "k_lo": k_lo, "k_hi": k_hi}, dtype)


def build_unet(seed: int = 0, dtype=np.float32, k_lo: float = min(K_IN, K_OUT),
               k_hi: float = max(K_IN, K_OUT)) -> UNet:
    return UNet({"seed": seed, "k_lo": k_lo, "k_hi": k_hi}, dtype)


def build_model(kind: str, seed: int = 0, concat: int = 4, **kw) -> Upscaler:
    if kind == "ffnn":
        return build_ffnn(seed, **kw)
    if kind in ("mea1", "mea2"):
        return build_mea(1 if kind == "mea1" else 2, concat, seed, **kw)
    if kind == "unet":
        return build_unet(seed, **kw)
    raise InvalidArgument(f"unknown trainable model kind {kind!r}; choose from {TRAINABLE}")


def upscale_interp(T11: ScalarField, order: int = 3) -> ScalarField:
    if T11.n != 11:
        raise InvalidArgument(f"interpolation upscaler expects an 11 x 11 field, got n={T11.n}")
    return resample(T11, 101, order)


class InterpUpscaler:
    """Non-trainable baseline with the same ``predict(pairs)`` surface."""

    kind = "interp"

    def __init__(self, order: int = 3):
        self.order = order

    def predict(self, pairs: PairSet, batch: int = 50) -> np.ndarray:
        return np.stack([upscale_interp(ScalarField(t), self.order).values
                         for t in pairs.coarse_T]) if len(pairs) else np.zeros((0, 101, 101))


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 500
    batch: int = 50
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction <= 1:
            raise InvalidArgument("train_fraction must be in (0, 1]")
        if self.epochs < 1 or self.batch < 1:
            raise InvalidArgument("epochs and batch must be positive")

    @classmethod
    def for_kind(cls, kind: str, **kw) -> "TrainConfig":
        if kind == "ffnn" and "batch" not in kw:
            kw["batch"] = 100
        return cls(**kw)


@dataclass
class LossHistory:
    epoch: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    seconds: float = 0.0

    def rows(self):
        return list(zip(self.epoch, self.train_mse, self.val_mse))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,train_mse,val_mse\n")
            for e, t, v in self.rows():
                fh.write(f"{e},{t:.9g},{v:.9g}\n")


def split_pairs(count: int, train_fraction: float, seed: int):
    order = np.random.default_rng([seed, 0x5EED]).permutation(count)
    n_train = int(round(count * train_fraction))
    n_train = min(max(n_train, 1), count)
    tr, va = np.sort(order[:n_train]), np.sort(order[n_train:])
    return tr, (va if va.size else tr)


def evaluate_mse(model: Upscaler, pairs: PairSet, batch: int = 50) -> float:
    pred = model.predict(pairs, batch)
    return float(np.mean((pred - pairs.target) ** 2))


def train_upscaler(model: Upscaler, pairs: PairSet, config: TrainConfig = TrainConfig(),
                   dataset_hash: str = "", on_epoch=None):
    """Supervised MSE training with Adam; keeps the best-validation weights.

    Returns ``(checkpoint, history)``; the model is left holding the best
    weights as well.
    """
    if not isinstance(model, Upscaler):
        raise InvalidArgument(f"{type(model).__name__} is not a trainable upscaler")
    if len(pairs) == 0:
        raise InvalidArgument("no training pairs")
    if pairs.target is None:
        raise InvalidArgument("training pairs need fine-grid targets")
    missing = [r for r in (DECODER_SIZES if isinstance(model, (MEA, UNet)) else ()) if r not in pairs.k]
    if missing:
        raise InvalidArgument(f"pairs lack conductivity levels {missing} needed by {model.kind}")
    tr, va = split_pairs(len(pairs), config.train_fraction, config.seed)
    train, val = pairs.subset(tr), pairs.subset(va)
    batch = min(config.batch, len(train))
    meta = {"lr": config.lr, "seed": config.seed, "dataset_hash": dataset_hash,
            "batch": batch, "train_size": len(train)}
    hist = LossHistory()
    best = (np.inf, model.store.state(), 0)
    last_good = model.checkpoint(epoch=0, **meta)
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train))
        total = 0.0
        for s in range(0, len(order), batch):
            idx = order[s:s + batch]
            sub = train.subset(idx)
            model.store.zero_grad()
            try:
                pred = model.forward(*model.inputs(sub), training=True)
            except NumericalFailure as exc:
                raise TrainingFailure(f"{model.kind}: diverged at epoch {epoch}: {exc}",
                                      last_good, epoch) from exc
            loss, grad = F.mse_loss(pred, sub.target.astype(model.dtype))
            if not np.isfinite(loss):
                raise TrainingFailure(f"{model.kind}: loss became non-finite at epoch {epoch}",
                                      last_good, epoch)
            model.backward(grad)
            adam_step(model.store, lr=config.lr)
            total += loss * idx.size
        try:
            vloss = evaluate_mse(model, val)
        except NumericalFailure:
            vloss = np.nan
        if not np.isfinite(vloss):
            raise TrainingFailure(f"{model.kind}: validation loss non-finite at epoch {epoch}",
                                  last_good, epoch)
        hist.epoch.append(epoch)
        hist.train_mse.append(total / len(train))
        hist.val_mse.append(vloss)
        if vloss < best[0]:
            best = (vloss, model.store.state(), epoch)
        last_good = model.checkpoint(epoch=epoch, **meta)
        if on_epoch is not None:
            on_epoch(epoch, hist)
        if epoch % 25 == 0 or epoch == config.epochs:
            log.info("%s epoch %d train %.3e val %.3e", model.kind, epoch, hist.train_mse[-1], vloss)
    hist.seconds = time.perf_counter() - t0
    model.store.load_state(best[1])
    model.meta.update(meta, epoch=config.epochs, best_epoch=best[2], best_val_mse=best[0])
    return model.checkpoint(), hist


def predict_high(model, pairs: PairSet) -> list[ScalarField]:
    if isinstance(model, Checkpoint):
        model = Network.from_checkpoint(model)
    if not isinstance(model, (Upscaler, InterpUpscaler)):
        raise InvalidArgument(f"cannot upscale with {type(model).__name__}")
    if isinstance(model, (MEA, UNet)):
        missing = [r for r in DECODER_SIZES if r not in pairs.k]
        if missing:
            raise InvalidArgument(f"{model.kind} needs conductivity levels {missing}")
    return [ScalarField(p) for p in model.predict(pairs)]


def with_coarse(pairs: PairSet, coarse_T: np.ndarray) -> PairSet:
    return replace(pairs, coarse_T=np.asarray(coarse_T, dtype=np.float64))
