"""Random affine augmentation: rotation, shear, zoom and shift about the image centre."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import sample_bilinear
from .tensor import Prng


@dataclass(frozen=True)
class AugmentSpec:
    rotation_deg: float = 15.0
    shift_frac: float = 0.1
    shear_deg: float = 10.0
    zoom: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self):
        if min(self.rotation_deg, self.shift_frac, self.shear_deg) < 0:
            raise ValueError("augmentation ranges must be non-negative")
        lo, hi = self.zoom
        if not 0 < lo <= 1.0 <= hi:
            raise ValueError(f"zoom interval {self.zoom} must contain 1")

    @classmethod
    def from_config(cls, cfg) -> "AugmentSpec":
        return cls(cfg.rotation_deg, cfg.shift_frac, cfg.shear_deg, (cfg.zoom_lo, cfg.zoom_hi))

    @property
    def is_identity(self) -> bool:
        return self.rotation_deg == 0 and self.shift_frac == 0 and self.shear_deg == 0 and self.zoom == (1.0, 1.0)


def affine_matrix(rotation_deg: float, shear_deg: float, zoom_x: float, zoom_y: float) -> np.ndarray:
    """Rotation @ shear @ zoom, acting on centred (x, y) coordinates."""
    t = math.radians(rotation_deg)
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    shear = np.array([[1.0, math.tan(math.radians(shear_deg))], [0.0, 1.0]])
    return rot @ shear @ np.diag([zoom_x, zoom_y])


def affine_warp(img: np.ndarray, rotation_deg: float = 0.0, shear_deg: float = 0.0,
                zoom_x: float = 1.0, zoom_y: float = 1.0, shift_x: float = 0.0, shift_y: float = 0.0) -> np.ndarray:
    """Warp [C,H,W] by the affine map about its centre; shifts are in pixels.

    Each output pixel is pulled from the inverse-mapped source location with
    bilinear interpolation; locations outside the source read as 0.
    """
    _, h, w = img.shape
    inv = np.linalg.inv(affine_matrix(rotation_deg, shear_deg, zoom_x, zoom_y))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    px = xx - cx - shift_x
    py = yy - cy - shift_y
    src_x = inv[0, 0] * px + inv[0, 1] * py + cx
    src_y = inv[1, 0] * px + inv[1, 1] * py + cy
    return np.clip(sample_bilinear(img, src_y, src_x, border="zero"), 0, 1).astype(img.dtype)


def augment(x: np.ndarray, spec: AugmentSpec, p: Prng) -> np.ndarray:
    """Apply one randomly sampled affine transform to an image [C,H,W] in [0,1].

    Draws, in order: rotation, shear, zoom_x, zoom_y, shift_x, shift_y, each
    uniform over its range.
    """
    if spec.is_identity:
        return x.copy()
    _, h, w = x.shape
    u = p.uniform((6,), 0.0, 1.0, dtype=np.float64)
    lo, hi = spec.zoom

    def span(r, a, b):
        return a + (b - a) * r

    return affine_warp(
        x,
        rotation_deg=span(u[0], -spec.rotation_deg, spec.rotation_deg),
        shear_deg=span(u[1], -spec.shear_deg, spec.shear_deg),
        zoom_x=span(u[2], lo, hi),
        zoom_y=span(u[3], lo, hi),
        shift_x=span(u[4], -spec.shift_frac, spec.shift_frac) * w,
        shift_y=span(u[5], -spec.shift_frac, spec.shift_frac) * h,
    )
