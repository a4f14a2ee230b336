"""Photometric rendering of DIGIT images from height maps.

A three-light Lambertian model plays the part of the real sensor optics.
A per-channel quadratic polynomial in the surface gradient is fitted against
it from sphere presses, and that polynomial is what renders converted fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import contact
from . import geometry as geo
from .numerics import least_squares

CALIB_SPHERE_RADIUS = 4.0  # mm
CALIB_SPHERE_DEPTH = 1.0  # mm
CALIB_GRID = 5
MAX_CALIB_SAMPLES = 100_000
N_MONOMIALS = 6


@dataclass
class TactileImage:
    pixels: np.ndarray  # (IMAGE_HEIGHT, IMAGE_WIDTH, 3) uint8

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("a tactile image is an (H, W, 3) uint8 array")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _light_dir(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


@dataclass(frozen=True)
class LightRig:
    directions: np.ndarray = field(
        default_factory=lambda: np.stack([_light_dir(a, 60.0) for a in (0.0, 120.0, 240.0)])
    )
    colors: np.ndarray = field(
        default_factory=lambda: np.array([
            [0.50, 0.08, 0.08],
            [0.08, 0.50, 0.08],
            [0.08, 0.08, 0.50],
        ])
    )
    ambient: np.ndarray = field(default_factory=lambda: np.array([0.12, 0.12, 0.12]))

    def __post_init__(self):
        if not np.allclose(np.linalg.norm(self.directions, axis=1), 1.0, atol=1e-12):
            raise ValueError("light directions must be unit vectors")


@dataclass
class CalibrationTable:
    """Quadratic gradient-to-colour map.

    ``coeffs[c]`` multiplies ``(1, gx, gy, gx^2, gx*gy, gy^2)`` for channel c.
    """

    coeffs: np.ndarray  # (3, 6)
    background: np.ndarray  # (3,)
    degree: int = 2

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.degree != 2 or self.coeffs.shape != (3, N_MONOMIALS):
            raise ValueError("calibration table holds 6 quadratic coefficients per channel")
        if self.background.shape != (3,) or np.any((self.background < 0) | (self.background > 255)):
            raise ValueError("background must be an RGB triple in [0, 255]")


def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(x, 0.0, 255.0)).astype(np.uint8)


def monomials(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    return np.stack([np.ones_like(gx), gx, gy, gx * gx, gx * gy, gy * gy], axis=-1)


def shade_reference(normals: np.ndarray, rig: LightRig | None = None) -> TactileImage:
    """Lambertian image ``255 * (ambient + sum_l color_l * max(0, n . d_l))``."""
    rig = rig or LightRig()
    cos = np.maximum(np.einsum("hwk,lk->hwl", normals, rig.directions), 0.0)
    rgb = rig.ambient + np.einsum("hwl,lc->hwc", cos, rig.colors)
    return TactileImage(_to_uint8(255.0 * rgb))


def calibration_poses() -> list[tuple[float, float]]:
    xs = np.linspace(4.0, 16.0, CALIB_GRID)
    ys = np.linspace(3.0, 13.0, CALIB_GRID)
    return [(float(x), float(y)) for y in ys for x in xs]


def sphere_heightmap(
    x: float, y: float, radius: float = CALIB_SPHERE_RADIUS, depth: float = CALIB_SPHERE_DEPTH,
    sigma_px: float = geo.DEFAULT_SIGMA_PX,
) -> geo.HeightMap:
    """Smoothed height map of a sphere pressed into the DIGIT pad."""
    spec = contact.ContactSpec(x, y, depth * contact.STIFFNESS, radius)
    f = contact.indent_sphere(contact.surface("digit"), spec)
    return geo.gaussian_smooth(geo.rasterize_heightmap(f), sigma_px)


@dataclass
class CalibrationSet:
    gx: np.ndarray
    gy: np.ndarray
    rgb: np.ndarray  # (n, 3) uint8

    def __len__(self) -> int:
        return len(self.gx)


def generate_calibration_set(
    rig: LightRig | None = None, max_samples: int = MAX_CALIB_SAMPLES
) -> CalibrationSet:
    """Gradient/colour pairs from a 5x5 grid of sphere presses.

    All pixels of all presses are pooled and thinned with a fixed stride,
    chosen coprime to the image width so the kept pixels do not line up in
    columns.
    """
    rig = rig or LightRig()
    gxs, gys, cols = [], [], []
    for x, y in calibration_poses():
        h = sphere_heightmap(x, y)
        gx, gy = geo.height_gradients(h)
        img = shade_reference(geo.height_to_normals(h), rig)
        gxs.append(gx.reshape(-1))
        gys.append(gy.reshape(-1))
        cols.append(img.pixels.reshape(-1, 3))
    gx, gy, rgb = np.concatenate(gxs), np.concatenate(gys), np.concatenate(cols)
    stride = max(1, -(-len(gx) // max_samples))
    while stride > 1 and math.gcd(stride, geo.IMAGE_WIDTH) != 1:
        stride += 1
    keep = slice(0, None, stride)
    return CalibrationSet(gx[keep].copy(), gy[keep].copy(), rgb[keep].copy())


def fit_calibration(samples: CalibrationSet) -> CalibrationTable:
    if len(samples) < N_MONOMIALS:
        raise ValueError(f"need at least {N_MONOMIALS} samples, got {len(samples)}")
    design = monomials(samples.gx, samples.gy)
    rgb = np.asarray(samples.rgb, dtype=np.float64)
    coeffs = np.stack([least_squares(design, rgb[:, c])[:, 0] for c in range(3)])
    background = np.clip(coeffs[:, 0], 0.0, 255.0)
    return CalibrationTable(coeffs, background)


def render_taxim(h: geo.HeightMap, calib: CalibrationTable) -> TactileImage:
    gx, gy = geo.height_gradients(h)
    rgb = monomials(gx, gy) @ calib.coeffs.T
    return TactileImage(_to_uint8(rgb))


def background_image(calib: CalibrationTable, shape=(geo.IMAGE_HEIGHT, geo.IMAGE_WIDTH)) -> TactileImage:
    px = np.broadcast_to(_to_uint8(calib.coeffs[:, 0]), shape + (3,))
    return TactileImage(px.copy())


def rmse(a: TactileImage, b: TactileImage) -> float:
    d = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    return float(np.sqrt(np.mean(d * d)))


def image_centroid(img: TactileImage, background: np.ndarray) -> tuple[float, float]:
    """Pixel centroid ``(col, row)`` weighted by colour deviation from background."""
    dev = np.abs(img.pixels.astype(np.float64) - np.asarray(background, dtype=np.float64)).sum(axis=2)
    total = dev.sum()
    if total <= 0.0:
        return (math.nan, math.nan)
    rows, cols = np.indices(dev.shape)
    return float((dev * cols).sum() / total), float((dev * rows).sum() / total)
