"""Color overlays of solved fields on the artery mask."""
from __future__ import annotations

import numpy as np

from .exceptions import InvalidField
from .hemo import FIELDS

# Viridis sampled at 0, .25, .5, .75, 1 and interpolated linearly in RGB.
COLORMAP_ANCHORS = np.array(
    [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ],
    dtype=float,
)
MASK_GRAY = 60


def colormap(t) -> np.ndarray:
    """Map values in [0, 1] to uint8 RGB."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0) * (len(COLORMAP_ANCHORS) - 1)
    lo = np.minimum(np.floor(t).astype(int), len(COLORMAP_ANCHORS) - 2)
    frac = (t - lo)[..., None]
    rgb = COLORMAP_ANCHORS[lo] * (1.0 - frac) + COLORMAP_ANCHORS[lo + 1] * frac
    return np.round(rgb).astype(np.uint8)


def render_overlay(mask, graph, solution, field: str) -> np.ndarray:
    """RGB raster: mask in gray, centerline pixels colored over the field's min-max range.

    A constant field maps every centerline pixel to the colormap midpoint.
    """
    if field not in FIELDS:
        raise InvalidField(f"unknown field {field!r}; expected one of {FIELDS}")
    grid = mask.grid if hasattr(mask, "grid") else np.asarray(mask, dtype=bool)
    out = np.zeros(grid.shape + (3,), dtype=np.uint8)
    out[grid] = MASK_GRAY
    table = solution.table if hasattr(solution, "table") else solution
    values = table[field].to_numpy(dtype=float)
    lo, hi = float(values.min()), float(values.max())
    t = np.full_like(values, 0.5) if hi == lo else (values - lo) / (hi - lo)
    out[table["row"].to_numpy(), table["col"].to_numpy()] = colormap(t)
    return out
