"""Artery masks and optic-disc annotations."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import EmptyInput

DEFAULT_PIXEL_PITCH_UM = 6.0


@dataclass(frozen=True)
class OpticDiscEllipse:
    """Optic-disc ellipse in pixel units.

    ``angle`` is the counter-clockwise rotation (radians) of the first semi-axis
    measured from the column axis.
    """

    center: tuple[float, float]
    axes: tuple[float, float]
    angle: float = 0.0

    def __post_init__(self):
        if min(self.axes) <= 0:
            raise ValueError("ellipse semi-axes must be positive")

    def contains(self, rows, cols) -> np.ndarray:
        dr = np.asarray(rows, dtype=float) - self.center[0]
        dc = np.asarray(cols, dtype=float) - self.center[1]
        cos, sin = np.cos(self.angle), np.sin(self.angle)
        u = dc * cos - dr * sin
        w = dc * sin + dr * cos
        return (u / self.axes[0]) ** 2 + (w / self.axes[1]) ** 2 <= 1.0

    def to_dict(self) -> dict:
        return {"center": list(self.center), "axes": list(self.axes), "angle": self.angle}

    @classmethod
    def from_dict(cls, d: dict) -> "OpticDiscEllipse":
        return cls(
            center=(float(d["center"][0]), float(d["center"][1])),
            axes=(float(d["axes"][0]), float(d["axes"][1])),
            angle=float(d.get("angle", 0.0)),
        )


@dataclass
class ArteryMask:
    grid: np.ndarray
    od_ellipse: OpticDiscEllipse
    pixel_pitch_um: float = DEFAULT_PIXEL_PITCH_UM
    name: str = field(default="")

    def __post_init__(self):
        self.grid = np.asarray(self.grid).astype(bool)
        if self.grid.ndim != 2:
            raise ValueError("artery mask must be a 2D raster")
        if not self.grid.any():
            raise EmptyInput("artery mask has no foreground pixels")
        if self.pixel_pitch_um <= 0:
            raise ValueError("pixel pitch must be positive")
        r, c = self.od_ellipse.center
        if not (0 <= r < self.grid.shape[0] and 0 <= c < self.grid.shape[1]):
            raise ValueError("optic disc center lies outside the raster")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def pixel_pitch_cm(self) -> float:
        return self.pixel_pitch_um * 1e-4


def read_mask_image(path) -> np.ndarray:
    """Read a single-channel raster; any nonzero value is artery."""
    img = np.asarray(Image.open(path))
    if img.ndim == 3:
        img = img.max(axis=2)
    return img != 0


def write_mask_image(path, grid: np.ndarray) -> None:
    Image.fromarray(np.asarray(grid, dtype=np.uint8) * 255).save(path)


def read_od_ellipse(path) -> OpticDiscEllipse:
    return OpticDiscEllipse.from_dict(json.loads(Path(path).read_text()))


def write_od_ellipse(path, ellipse: OpticDiscEllipse) -> None:
    Path(path).write_text(json.dumps(ellipse.to_dict(), indent=2) + "\n")


def load_artery_mask(mask_path, od_path, pixel_pitch_um: float = DEFAULT_PIXEL_PITCH_UM) -> ArteryMask:
    return ArteryMask(
        grid=read_mask_image(mask_path),
        od_ellipse=read_od_ellipse(od_path),
        pixel_pitch_um=pixel_pitch_um,
        name=Path(mask_path).stem,
    )
