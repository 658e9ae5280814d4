"""Two-phase conductivity microstructures.

Training samples are unions of (optionally hollow) ellipses; the test suite
holds six fixed shapes that never occur in training (rings, triangles,
rectangles).
"""
from __future__ import annotations

import hashlib
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidArgument
from .fields import ScalarField, node_coordinates

log = logging.getLogger(__name__)

K_IN = 0.1
K_OUT = 1.0
N_HR = 101


@dataclass(frozen=True)
class EllipseSpec:
    center: tuple[float, float]
    a_outer: float
    b_outer: float
    a_inner: float = 0.0
    b_inner: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not (self.a_outer > 0 and self.b_outer > 0):
            raise InvalidArgument("outer semi-axes must be positive")
        if not (0 <= self.a_inner <= self.a_outer and 0 <= self.b_inner <= self.b_outer):
            raise InvalidArgument("inner semi-axes must lie in [0, outer]")

    @property
    def hollow(self) -> bool:
        return self.a_inner > 0 and self.b_inner > 0


@dataclass
class MicrostructureSample:
    k101: ScalarField
    ellipses: list[EllipseSpec]
    k_in: float = K_IN
    k_out: float = K_OUT
    phase_fraction: float = 0.0
    label: str = ""

    def digest(self) -> str:
        return field_digest(self.k101)


def field_digest(f: ScalarField) -> str:
    return hashlib.sha256(f.values.astype("<f4").tobytes()).hexdigest()


def _check_conductivities(k_in, k_out):
    if not (k_in > 0 and k_out > 0):
        raise InvalidArgument(f"conductivities must be positive, got k_in={k_in}, k_out={k_out}")


def _trig(theta: float) -> tuple[float, float]:
    # Rounded so that (a, b, t) and (b, a, t + pi/2) evaluate bit-identically.
    return round(math.cos(theta), 12) + 0.0, round(math.sin(theta), 12) + 0.0


def ellipse_mask(e: EllipseSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    c, s = _trig(e.theta)
    dx = x - e.center[0]
    dy = y - e.center[1]
    u = c * dx + s * dy
    v = -s * dx + c * dy
    inside = (u / e.a_outer) ** 2 + (v / e.b_outer) ** 2 <= 1.0
    if e.hollow:
        inside &= (u / e.a_inner) ** 2 + (v / e.b_inner) ** 2 >= 1.0
    return inside


def rasterize(ellipses: Sequence[EllipseSpec], n: int = N_HR, k_in: float = K_IN,
              k_out: float = K_OUT) -> ScalarField:
    if n < 2:
        raise InvalidArgument("n must be >= 2")
    _check_conductivities(k_in, k_out)
    y, x = node_coordinates(n)
    mask = np.zeros((n, n), dtype=bool)
    for e in ellipses:
        mask |= ellipse_mask(e, x, y)
    return ScalarField(np.where(mask, k_in, k_out))


def phase_fraction(field: ScalarField, k_in: float = K_IN) -> float:
    hits = np.isclose(field.values, k_in, rtol=1e-9, atol=0.0)
    return float(np.count_nonzero(hits)) / field.values.size


# -- parametric sweep --------------------------------------------------------

@dataclass(frozen=True)
class Sweep:
    """Closed range ``start, start+step, ..., <= stop``."""

    start: float
    stop: float
    step: float

    def values(self) -> list[float]:
        if self.step <= 0:
            raise ConfigError(f"sweep step must be positive, got {self.step}")
        if self.stop < self.start:
            raise ConfigError(f"empty sweep range [{self.start}, {self.stop}]")
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [round(self.start + i * self.step, 10) for i in range(count)]


@dataclass(frozen=True)
class SweepConfig:
    n_c: Sweep = Sweep(1, 3, 1)
    a_outer: Sweep = Sweep(0.35, 0.60, 0.05)
    b_outer: Sweep = Sweep(0.30, 0.50, 0.05)
    # inner semi-axes are this fraction of the outer ones (0 = solid ellipse)
    inner_ratio: Sweep = Sweep(0.0, 0.48, 0.08)
    theta: Sweep = Sweep(0.0, 8 * math.pi / 9, math.pi / 9)
    k_in: float = K_IN
    k_out: float = K_OUT
    rng_seed: int = 0
    center_range: tuple[float, float] = (0.15, 0.85)
    n: int = N_HR
    limit: int | None = None

    def __post_init__(self):
        _check_conductivities(self.k_in, self.k_out)
        for name in ("n_c", "a_outer", "b_outer", "inner_ratio", "theta"):
            getattr(self, name).values()
        if any(v > 1 for v in self.inner_ratio.values()):
            raise ConfigError("inner_ratio must not exceed 1")

    def grid(self) -> list[tuple]:
        combos = list(itertools.product(
            [int(v) for v in self.n_c.values()], self.a_outer.values(), self.b_outer.values(),
            self.inner_ratio.values(), self.theta.values()))
        if self.limit is not None:
            combos = combos[: self.limit]
        return combos

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        for name in ("n_c", "a_outer", "b_outer", "inner_ratio", "theta"):
            if name in d and not isinstance(d[name], Sweep):
                v = d[name]
                d[name] = Sweep(**v) if isinstance(v, dict) else Sweep(*v)
        if "center_range" in d:
            d["center_range"] = tuple(d["center_range"])
        return cls(**d)


def _sample_ellipses(combo, index: int, cfg: SweepConfig) -> list[EllipseSpec]:
    n_c, a, b, ratio, theta = combo
    rng = np.random.default_rng([cfg.rng_seed, index])
    lo, hi = cfg.center_range
    out = []
    for i in range(n_c):
        scale = 1.0 if i == 0 else rng.uniform(0.6, 1.0)
        th = theta if i == 0 else theta + rng.uniform(0.0, math.pi)
        cx, cy = rng.uniform(lo, hi, size=2)
        ao, bo = a * scale, b * scale
        out.append(EllipseSpec((float(cx), float(cy)), ao, bo, ao * ratio, bo * ratio, th))
    return out


def _make_sample(args) -> MicrostructureSample:
    combo, index, cfg = args
    ellipses = _sample_ellipses(combo, index, cfg)
    k = rasterize(ellipses, cfg.n, cfg.k_in, cfg.k_out)
    return MicrostructureSample(k, ellipses, cfg.k_in, cfg.k_out,
                                phase_fraction(k, cfg.k_in), label=f"sweep-{index}")


def generate_dataset(config: SweepConfig | None = None, workers: int = 1):
    """Rasterise every combination of the sweep grid.

    Each sample draws its centres from an RNG keyed on ``(seed, index)``, so
    serial and parallel runs agree. Homogeneous samples are dropped.
    Returns ``(samples, discarded_count)``.
    """
    cfg = config or SweepConfig()
    jobs = [(combo, i, cfg) for i, combo in enumerate(cfg.grid())]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(_make_sample, jobs, chunksize=64))
    else:
        samples = [_make_sample(j) for j in jobs]
    kept = [s for s in samples if 0.0 < s.phase_fraction < 1.0]
    discarded = len(samples) - len(kept)
    if discarded:
        log.info("discarded %d homogeneous samples", discarded)
    if not kept:
        raise ConfigError("sweep produced zero usable samples")
    return kept, discarded


# -- out-of-distribution test suite ------------------------------------------

def _in_triangle(x, y, verts):
    (x1, y1), (x2, y2), (x3, y3) = verts
    d1 = (x - x2) * (y1 - y2) - (x1 - x2) * (y - y2)
    d2 = (x - x3) * (y2 - y3) - (x2 - x3) * (y - y3)
    d3 = (x - x1) * (y3 - y1) - (x3 - x1) * (y - y1)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def _in_rect(x, y, x0, x1, y0, y1):
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def _in_ring(x, y, cx, cy, r_out, r_in):
    d2 = (x - cx) ** 2 + (y - cy) ** 2
    return (d2 <= r_out ** 2) & (d2 >= r_in ** 2)


# Vertices sit off the 0.01 node lattice so edge nodes do not bias area checks.
TRIANGLE = ((0.205, 0.205), (0.805, 0.205), (0.505, 0.805))

_TEST_SHAPES = {
    "ring": lambda x, y: _in_ring(x, y, 0.505, 0.505, 0.305, 0.185),
    "triangle": lambda x, y: _in_triangle(x, y, TRIANGLE),
    "rectangle": lambda x, y: _in_rect(x, y, 0.255, 0.755, 0.305, 0.705),
    "cross": lambda x, y: (_in_rect(x, y, 0.405, 0.605, 0.105, 0.905)
                           | _in_rect(x, y, 0.105, 0.905, 0.405, 0.605)),
    "frame": lambda x, y: (_in_rect(x, y, 0.155, 0.855, 0.155, 0.855)
                           & ~_in_rect(x, y, 0.305, 0.705, 0.305, 0.705)),
    "ring+triangle": lambda x, y: (_in_ring(x, y, 0.305, 0.695, 0.205, 0.105)
                                   | _in_triangle(x, y, ((0.455, 0.105), (0.905, 0.105),
                                                         (0.905, 0.605)))),
}

TEST_NAMES = tuple(_TEST_SHAPES)


def generate_test_suite(k_in: float = K_IN, k_out: float = K_OUT) -> list[MicrostructureSample]:
    _check_conductivities(k_in, k_out)
    y, x = node_coordinates(N_HR)
    suite = []
    for name, shape in _TEST_SHAPES.items():
        k = ScalarField(np.where(shape(x, y), k_in, k_out))
        suite.append(MicrostructureSample(k, [], k_in, k_out, phase_fraction(k, k_in), label=name))
    return suite
