"""Glue between the stages: labelling datasets, building training pairs and
running the condense -> coarse solve -> upscale chain on a single sample."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import InvalidArgument, PreconditionError
from .fem import BoundaryCondition, solve_steady_heat
from .fields import WINDOWS, ScalarField, condense_max
from .fol import CoarseSolver, FemCoarseSolver
from .io import Dataset
from .microgen import MicrostructureSample
from .models import DECODER_SIZES, InterpUpscaler, PairSet, UNet

log = logging.getLogger(__name__)


def dataset_from_samples(samples: list[MicrostructureSample], manifest: dict | None = None) -> Dataset:
    k = np.stack([s.k101.values for s in samples]) if samples else np.zeros((0, 101, 101))
    return Dataset(k, None, dict(manifest or {}))


def _solve_one(args):
    k, bc = args
    return solve_steady_heat(ScalarField(k), bc).values


def label_dataset(ds: Dataset, bc: BoundaryCondition = BoundaryCondition(), workers: int = 1) -> Dataset:
    """Fill the temperature block with fine-grid FEM solutions (input order preserved)."""
    jobs = [(k, bc) for k in ds.k]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            T = list(pool.map(_solve_one, jobs, chunksize=16))
    else:
        T = [_solve_one(j) for j in jobs]
    T = np.stack(T) if T else np.zeros_like(ds.k)
    return Dataset(ds.k, T, dict(ds.manifest, bc=[bc.left_T, bc.right_T]))


def condense_batch(k101: np.ndarray) -> dict[int, np.ndarray]:
    k101 = np.asarray(k101, dtype=np.float64)
    if k101.ndim == 2:
        k101 = k101[None]
    if k101.shape[1:] != (101, 101):
        raise InvalidArgument(f"expected 101 x 101 conductivities, got {k101.shape[1:]}")
    out = {101: k101}
    for res, w in WINDOWS.items():
        out[res] = np.stack([condense_max(ScalarField(f), w).values for f in k101]) \
            if len(k101) else np.zeros((0, res, res))
    return out


def make_pairs(ds: Dataset, coarse: CoarseSolver | None = None, require_targets: bool = True) -> PairSet:
    """Condense every sample, solve at 11 x 11 with ``coarse`` and attach fine targets."""
    if require_targets and not ds.fully_labelled:
        raise PreconditionError("dataset has unlabelled samples; run the fine FEM labelling first")
    if ds.n != 101:
        raise InvalidArgument(f"training pairs need 101 x 101 samples, dataset has n={ds.n}")
    coarse = coarse or FemCoarseSolver()
    levels = condense_batch(ds.k)
    coarse_T = coarse.solve_batch(levels[11]) if len(ds) else np.zeros((0, 11, 11))
    return PairSet(coarse_T, levels, ds.T if ds.fully_labelled else None)


class Pipeline:
    """Single-sample inference chain. ``upscaler`` is any model with ``predict(pairs)``."""

    def __init__(self, upscaler, coarse: CoarseSolver | None = None):
        self.upscaler = upscaler
        self.coarse = coarse or FemCoarseSolver()

    @property
    def needs_coarse(self) -> bool:
        return not isinstance(self.upscaler, UNet)

    def prepare(self, k101: ScalarField) -> PairSet:
        levels = condense_batch(k101.values)
        if self.needs_coarse:
            coarse_T = self.coarse.solve_batch(levels[11])
        else:
            coarse_T = np.zeros((1, 11, 11))
        if isinstance(self.upscaler, InterpUpscaler):
            levels = {11: levels[11]}
        return PairSet(coarse_T, levels)

    def run(self, k101: ScalarField) -> ScalarField:
        pairs = self.prepare(k101)
        return ScalarField(self.upscaler.predict(pairs)[0])

    def upscale_only(self, pairs: PairSet) -> np.ndarray:
        return self.upscaler.predict(pairs)[0]


__all__ = ["dataset_from_samples", "label_dataset", "condense_batch", "make_pairs", "Pipeline",
           "DECODER_SIZES"]
