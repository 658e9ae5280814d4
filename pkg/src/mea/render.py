"""Binary PPM (P6) heatmaps.

Values map linearly onto a 256-entry colormap that interpolates the anchors
dark blue (0, 0, 128), blue (0, 0, 255), cyan (0, 255, 255), yellow
(255, 255, 0) and red (255, 0, 0) at evenly spaced positions. Row 0 of the
field (y = 0) is drawn at the bottom of the image.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .fields import ScalarField

_ANCHORS = np.array([[0, 0, 128], [0, 0, 255], [0, 255, 255], [255, 255, 0], [255, 0, 0]], dtype=float)


def colormap() -> np.ndarray:
    """``(256, 3)`` uint8 lookup table."""
    pos = np.linspace(0.0, 1.0, len(_ANCHORS))
    t = np.linspace(0.0, 1.0, 256)
    return np.stack([np.rint(np.interp(t, pos, _ANCHORS[:, c])) for c in range(3)], axis=1).astype(np.uint8)


COLORMAP = colormap()


def to_indices(values: np.ndarray, vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    lo = float(values.min()) if vmin is None else vmin
    hi = float(values.max()) if vmax is None else vmax
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    t = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    return np.rint(t * 255).astype(np.uint8)


def ppm_bytes(values: np.ndarray, vmin=None, vmax=None) -> bytes:
    img = COLORMAP[to_indices(np.asarray(values, dtype=float), vmin, vmax)][::-1]
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def render_heatmap(f: ScalarField, path, vmin=None, vmax=None) -> Path:
    path = Path(path)
    path.write_bytes(ppm_bytes(f.values, vmin, vmax))
    return path


def render_error_map(pred: ScalarField, truth: ScalarField, path, vmax=None) -> Path:
    path = Path(path)
    path.write_bytes(ppm_bytes(np.abs(pred.values - truth.values), 0.0, vmax))
    return path


def read_ppm(path) -> np.ndarray:
    """Inverse of :func:`ppm_bytes` for the header layout written here."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise FormatError("not a binary PPM written by this module")
    try:
        w, h = map(int, parts[1].split())
        return np.frombuffer(parts[3], np.uint8).reshape(h, w, 3)
    except ValueError as exc:
        raise FormatError(f"malformed PPM: {exc}") from exc
