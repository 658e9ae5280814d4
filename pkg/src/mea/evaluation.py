"""Error metrics, the six-case evaluation suite, timing and the training studies."""
from __future__ import annotations

import csv
import io
import json
import math
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidArgument, PreconditionError
from .fem import BoundaryCondition, compute_flux, solve_steady_heat
from .fields import ScalarField
from .fol import CoarseSolver, FemCoarseSolver
from .microgen import MicrostructureSample, generate_test_suite
from .models import (InterpUpscaler, PairSet, TrainConfig, build_mea, build_unet, train_upscaler)
from .nn.network import Network
from .pipeline import Pipeline, condense_batch

log = logging.getLogger(__name__)

MODEL_ORDER = ("interp", "ffnn", "mea1", "mea2", "unet")


def mean_abs_error(pred: ScalarField, truth: ScalarField) -> float:
    if pred.n != truth.n:
        raise InvalidArgument(f"resolution mismatch: {pred.n} vs {truth.n}")
    return float(np.abs(pred.values - truth.values).sum() / pred.n ** 2)


def flux_report(pred_T: ScalarField, truth_T: ScalarField, k101: ScalarField) -> float:
    """MAE between flux magnitudes of the predicted and reference temperatures."""
    if not (pred_T.n == truth_T.n == k101.n):
        raise InvalidArgument("flux_report needs fields of equal resolution")
    a = compute_flux(pred_T, k101).magnitude
    b = compute_flux(truth_T, k101).magnitude
    return float(np.abs(a - b).mean())


def cross_section(f: ScalarField, axis: str | int, index: int) -> np.ndarray:
    """``axis`` "row"/0 returns ``values[index, :]``; "col"/1 returns ``values[:, index]``."""
    if axis in ("row", "x", 0):
        ax = 0
    elif axis in ("col", "column", "y", 1):
        ax = 1
    else:
        raise InvalidArgument(f"axis must be 'row' or 'col', got {axis!r}")
    if not isinstance(index, (int, np.integer)) or not 0 <= index < f.n:
        raise InvalidArgument(f"index {index!r} outside 0..{f.n - 1}")
    return (f.values[index, :] if ax == 0 else f.values[:, index]).copy()


# -- test suite ---------------------------------------------------------------

@dataclass(frozen=True)
class TestCase:
    __test__ = False

    name: str
    k101: ScalarField
    truth: ScalarField | None


def build_test_cases(samples: list[MicrostructureSample] | None = None,
                     bc: BoundaryCondition = BoundaryCondition()) -> list[TestCase]:
    samples = samples if samples is not None else generate_test_suite()
    return [TestCase(s.label, s.k101, solve_steady_heat(s.k101, bc)) for s in samples]


@dataclass
class EvalReport:
    errors: dict[str, dict[str, float]]
    params: dict[str, int]
    seconds: dict[str, float | None]
    flux: dict[str, dict[str, float]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def models(self) -> list[str]:
        return list(self.errors)

    @property
    def cases(self) -> list[str]:
        return list(next(iter(self.errors.values()))) if self.errors else []

    def average(self, model: str) -> float:
        row = self.errors[model]
        return math.fsum(row.values()) / len(row)

    @property
    def averages(self) -> dict[str, float]:
        return {m: self.average(m) for m in self.errors}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", *self.cases, "average", "params", "seconds"])
        for m, row in self.errors.items():
            sec = self.seconds.get(m)
            w.writerow([m, *(f"{row[c]:.9g}" for c in self.cases), f"{self.average(m):.9g}",
                        self.params.get(m, 0), "" if sec is None else f"{sec:.6g}"])
        return buf.getvalue()

    def to_text(self) -> str:
        return json.dumps({"errors": self.errors, "averages": self.averages, "params": self.params,
                           "seconds": self.seconds, "flux": self.flux, "meta": self.meta},
                          indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(d["errors"], d["params"], d["seconds"], d.get("flux", {}), d.get("meta", {}))

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        c, t = stem.with_suffix(".csv"), stem.with_suffix(".json")
        c.write_text(self.to_csv())
        t.write_text(self.to_text())
        return c, t


def _as_model(m):
    if isinstance(m, Network) or isinstance(m, InterpUpscaler):
        return m
    return Network.from_checkpoint(m)


def evaluate_suite(models: dict, coarse: CoarseSolver | None = None,
                   cases: list[TestCase] | None = None, timing: bool = False,
                   interp_order: int = 3, meta: dict | None = None) -> EvalReport:
    """MAE of every model on every case against the fine FEM truth.

    ``models`` maps a name to a model or checkpoint; the interpolation
    baseline is always added. Timings are optional because wall-clock values
    would make otherwise identical reports differ.
    """
    cases = cases if cases is not None else build_test_cases()
    missing = [c.name for c in cases if c.truth is None]
    if missing:
        raise PreconditionError(f"test cases without fine FEM truth: {missing}")
    coarse = coarse or FemCoarseSolver()
    pool = {"interp": InterpUpscaler(interp_order)}
    pool.update({k: _as_model(v) for k, v in models.items()})
    names = [m for m in MODEL_ORDER if m in pool] + [m for m in pool if m not in MODEL_ORDER]
    errors, flux, params, seconds = {}, {}, {}, {}
    for name in names:
        pipe = Pipeline(pool[name], coarse)
        errors[name], flux[name] = {}, {}
        for case in cases:
            pred = pipe.run(case.k101)
            errors[name][case.name] = mean_abs_error(pred, case.truth)
            flux[name][case.name] = flux_report(pred, case.truth, case.k101)
        params[name] = pool[name].num_params() if isinstance(pool[name], Network) else 0
        seconds[name] = benchmark(pipe, cases[0].k101) if timing else None
    return EvalReport(errors, params, seconds, flux, dict(meta or {}))


# -- timing ----------------------------------------------------------------------

def median_time(fn, repeats: int = 20, warmup: int = 3) -> float:
    if repeats < 1:
        raise InvalidArgument("repeats must be >= 1")
    for _ in range(warmup):
        fn()
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(statistics.median(ts))


def benchmark(model, test_input: ScalarField, repeats: int = 20, warmup: int = 3,
              inclusive: bool = True, coarse: CoarseSolver | None = None) -> float:
    """Median single-sample wall-clock seconds.

    ``inclusive`` times condensation and the coarse solve as well; otherwise
    only the upscaling forward pass is timed.
    """
    pipe = model if isinstance(model, Pipeline) else Pipeline(_as_model(model), coarse)
    if inclusive:
        return median_time(lambda: pipe.run(test_input), repeats, warmup)
    pairs = pipe.prepare(test_input)
    return median_time(lambda: pipe.upscale_only(pairs), repeats, warmup)


def fem_benchmark(k101: ScalarField, repeats: int = 20, warmup: int = 3,
                  bc: BoundaryCondition = BoundaryCondition()) -> float:
    return median_time(lambda: solve_steady_heat(k101, bc), repeats, warmup)


# -- studies -------------------------------------------------------------------

STUDY_VALUES = {"concat": (1, 2, 3, 4), "batch": (25, 50, 100, 200), "datasize": (500, 1000, 2000, 4000)}


@dataclass
class StudyResult:
    kind: str
    values: list
    final_val: dict[str, float]
    curves: dict[str, list[float]]

    def write_csv(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for label, curve in self.curves.items():
            p = directory / f"{self.kind}_{label}.csv"
            with open(p, "w") as fh:
                fh.write("epoch,val_mse\n")
                for e, v in enumerate(curve, 1):
                    fh.write(f"{e},{v:.9g}\n")
            paths.append(p)
        return paths


def _subset_pairs(pairs: PairSet, size: int, seed: int) -> PairSet:
    order = np.random.default_rng([seed, 0xDA7A]).permutation(len(pairs))
    return pairs.subset(np.sort(order[:size]))


def run_study(kind: str, pairs: PairSet, base: TrainConfig = TrainConfig(), values=None) -> StudyResult:
    """Sweep one hyperparameter; the final-epoch validation MSE is recorded per setting."""
    if kind not in STUDY_VALUES:
        raise InvalidArgument(f"unknown study {kind!r}; choose from {sorted(STUDY_VALUES)}")
    values = list(values if values is not None else STUDY_VALUES[kind])
    final, curves = {}, {}

    def record(label, model, data, cfg):
        _, hist = train_upscaler(model, data, cfg)
        final[label] = hist.val_mse[-1]
        curves[label] = list(hist.val_mse)

    for v in values:
        if kind == "concat":
            record(f"concat{v}", build_mea(1, int(v), base.seed), pairs, base)
        elif kind == "batch":
            record(f"batch{v}", build_mea(1, 4, base.seed), pairs, TrainConfig(
                base.lr, base.epochs, int(v), base.train_fraction, base.seed))
        else:
            if v > len(pairs):
                raise ConfigError(f"datasize study asks for {v} samples, only {len(pairs)} available")
            sub = _subset_pairs(pairs, int(v), base.seed)
            record(f"mea1_{v}", build_mea(1, 4, base.seed), sub, base)
            record(f"unet_{v}", build_unet(base.seed), sub, base)
    return StudyResult(kind, values, final, curves)


__all__ = ["mean_abs_error", "flux_report", "cross_section", "TestCase", "build_test_cases", "EvalReport",
           "evaluate_suite", "median_time", "benchmark", "fem_benchmark", "StudyResult", "run_study",
           "condense_batch"]
