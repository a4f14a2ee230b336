"""Planar frames of the two sensors and height-map construction.

The BioTac elastomer is modelled as a half cylinder.  Developing it onto a
plane (``x = r * theta``, ``y = axial position``) is an exact isometry, and a
fixed affine map then stretches the developed rectangle over the DIGIT gel pad.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BIOTAC_RADIUS = 7.0  # mm
BIOTAC_LENGTH = 20.0  # mm
UNFOLDED_HALF_WIDTH = BIOTAC_RADIUS * math.pi / 2.0  # 7*pi/2 mm
DIGIT_WIDTH = 20.0  # mm, x
DIGIT_HEIGHT = 16.0  # mm, y

IMAGE_WIDTH = 240
IMAGE_HEIGHT = 320
DEFAULT_PITCH = DIGIT_WIDTH / IMAGE_WIDTH  # mm per pixel
DEFAULT_SIGMA_PX = 2.0

_X_SCALE = DIGIT_WIDTH / (2.0 * UNFOLDED_HALF_WIDTH)
_Y_SCALE = DIGIT_HEIGHT / BIOTAC_LENGTH


class OutOfRangeError(ValueError):
    """A point lies outside the region a mapping is defined on."""


@dataclass(frozen=True)
class PlanePoint:
    x: float
    y: float


@dataclass
class HeightMap:
    """Gel-pad indentation depth in mm, shape ``(IMAGE_HEIGHT, IMAGE_WIDTH)``."""

    data: np.ndarray
    pitch: float = DEFAULT_PITCH

    def __post_init__(self):
        if not self.pitch > 0:
            raise ValueError("pixel pitch must be positive")
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("height map must be 2-D")


def unfold_biotac(theta: float, u: float) -> PlanePoint:
    if not (-math.pi / 2 <= theta <= math.pi / 2) or not (0.0 <= u <= BIOTAC_LENGTH):
        raise OutOfRangeError(f"(theta={theta}, u={u}) outside the BioTac parametrisation")
    return PlanePoint(BIOTAC_RADIUS * theta, u)


def _in_unfolded(x, y) -> bool:
    return bool(np.all((np.abs(x) <= UNFOLDED_HALF_WIDTH) & (y >= 0.0) & (y <= BIOTAC_LENGTH)))


def _in_pad(x, y) -> bool:
    return bool(np.all((x >= 0.0) & (x <= DIGIT_WIDTH) & (y >= 0.0) & (y <= DIGIT_HEIGHT)))


def map_unfolded_to_digit(p: PlanePoint) -> PlanePoint:
    if not _in_unfolded(p.x, p.y):
        raise OutOfRangeError(f"{p} outside the unfolded BioTac rectangle")
    return PlanePoint((p.x + UNFOLDED_HALF_WIDTH) * _X_SCALE, p.y * _Y_SCALE)


def map_digit_to_unfolded(p: PlanePoint) -> PlanePoint:
    """Inverse of :func:`map_unfolded_to_digit`."""
    if not _in_pad(p.x, p.y):
        raise OutOfRangeError(f"{p} outside the DIGIT pad")
    return PlanePoint(p.x / _X_SCALE - UNFOLDED_HALF_WIDTH, p.y / _Y_SCALE)


def unfolded_to_digit_xy(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`map_unfolded_to_digit` without range checks."""
    return (np.asarray(x) + UNFOLDED_HALF_WIDTH) * _X_SCALE, np.asarray(y) * _Y_SCALE


def rasterize_heightmap(field, pitch: float = DEFAULT_PITCH) -> HeightMap:
    """Bilinearly resample a DIGIT deformation field onto the image grid.

    Field node ``(i, j)`` sits at ``(j * W / (cols - 1), i * H / (rows - 1))``.
    Pixel ``(r, c)`` samples at ``((c + 0.5) * pitch, (r + 0.5) * pitch)``;
    samples beyond the pad are left at zero.
    """
    if not pitch > 0:
        raise ValueError("pixel pitch must be positive")
    if getattr(field, "kind", "digit") != "digit":
        raise ValueError("height maps are built from DIGIT fields only")
    values = np.asarray(getattr(field, "values", field), dtype=np.float64)
    rows, cols = values.shape
    dx = DIGIT_WIDTH / (cols - 1)
    dy = DIGIT_HEIGHT / (rows - 1)

    px = (np.arange(IMAGE_WIDTH) + 0.5) * pitch
    py = (np.arange(IMAGE_HEIGHT) + 0.5) * pitch
    col_ok = px <= DIGIT_WIDTH
    row_ok = py <= DIGIT_HEIGHT

    fx = px[col_ok] / dx
    fy = py[row_ok] / dy
    j0 = np.minimum(np.floor(fx).astype(int), cols - 2)
    i0 = np.minimum(np.floor(fy).astype(int), rows - 2)
    tx = (fx - j0)[None, :]
    ty = (fy - i0)[:, None]
    v00 = values[np.ix_(i0, j0)]
    v01 = values[np.ix_(i0, j0 + 1)]
    v10 = values[np.ix_(i0 + 1, j0)]
    v11 = values[np.ix_(i0 + 1, j0 + 1)]
    patch = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11)

    out = np.zeros((IMAGE_HEIGHT, IMAGE_WIDTH))
    out[np.ix_(row_ok, col_ok)] = patch
    return HeightMap(out, pitch)


def gaussian_kernel(sigma_px: float) -> np.ndarray:
    """Normalised 1-D Gaussian truncated at ``ceil(3 sigma)``."""
    radius = int(math.ceil(3.0 * sigma_px))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (k / sigma_px) ** 2)
    return w / w.sum()


def gaussian_smooth(h: HeightMap, sigma_px: float = DEFAULT_SIGMA_PX) -> HeightMap:
    if sigma_px < 0:
        raise ValueError("sigma must be non-negative")
    if sigma_px == 0:
        return HeightMap(h.data.copy(), h.pitch)
    kernel = gaussian_kernel(sigma_px)
    r = len(kernel) // 2
    data = h.data
    padded = np.pad(data, ((0, 0), (r, r)), mode="edge")
    tmp = np.zeros_like(data)
    for k, w in enumerate(kernel):
        tmp += w * padded[:, k:k + data.shape[1]]
    padded = np.pad(tmp, ((r, r), (0, 0)), mode="edge")
    out = np.zeros_like(data)
    for k, w in enumerate(kernel):
        out += w * padded[k:k + data.shape[0], :]
    return HeightMap(out, h.pitch)


def height_gradients(h: HeightMap) -> tuple[np.ndarray, np.ndarray]:
    """``(dh/dx, dh/dy)`` in mm/mm; central differences, one-sided at borders."""
    gy, gx = np.gradient(h.data, h.pitch)
    return gx, gy


def height_to_normals(h: HeightMap) -> np.ndarray:
    """Unit normals ``(H, W, 3)`` of the indented surface ``z = -h``."""
    gx, gy = height_gradients(h)
    n = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)
