"""Analytic sphere indentation on the BioTac and DIGIT surfaces.

This replaces finite-element data generation with a closed-form model: the
rigid sphere is pushed to depth ``d = force / k``; inside the contact patch
the surface follows the sphere, and outside it an exponential skirt decays
with the geodesic distance from the contact centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import geometry as geo
from .numerics import Prng

GRID = 64
STIFFNESS = 5.0  # N/mm
SKIRT_LENGTH = 1.0  # mm
ELECTRODE_SIGMA = 2.5  # mm
ELECTRODE_GAIN = 1.0
N_ELECTRODES = 19
KINDS = ("biotac", "digit")


def _electrode_layout() -> np.ndarray:
    # staggered rows of 4-5-5-5 sites in the unfolded frame
    full = np.linspace(-8.8, 8.8, 5)
    short = 0.5 * (full[:-1] + full[1:])
    rows = [(2.5, short), (7.5, full), (12.5, full), (17.5, full)]
    return np.array([(x, y) for y, xs in rows for x in xs])


ELECTRODE_SITES = _electrode_layout()  # (19, 2) mm


class ContactError(ValueError):
    """Invalid contact specification."""


@dataclass(frozen=True)
class SensorSurface:
    kind: str
    positions: np.ndarray = field(repr=False)  # (rows, cols, 3) mm
    normals: np.ndarray = field(repr=False)  # (rows, cols, 3)
    plane_x: np.ndarray = field(repr=False)  # (rows, cols) planar frame
    plane_y: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.positions.shape[:2]

    def contains(self, x: float, y: float) -> bool:
        if self.kind == "biotac":
            return abs(x) <= geo.UNFOLDED_HALF_WIDTH and 0.0 <= y <= geo.BIOTAC_LENGTH
        return 0.0 <= x <= geo.DIGIT_WIDTH and 0.0 <= y <= geo.DIGIT_HEIGHT


@dataclass(frozen=True)
class ContactSpec:
    """A spherical press.  ``u, v`` are planar coordinates of the centre."""

    u: float
    v: float
    force: float
    indenter_radius: float
    angle: float = 0.0

    def __post_init__(self):
        if not self.indenter_radius > 0:
            raise ContactError("indenter radius must be positive")
        if not self.force >= 0:
            raise ContactError("force must be non-negative")

    @property
    def depth(self) -> float:
        return self.force / STIFFNESS

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.u, self.v, self.force, self.indenter_radius, self.angle)


@dataclass
class DeformationField:
    values: np.ndarray  # (rows, cols) mm, into the sensor
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sensor kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=np.float64)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass
class PairedSample:
    spec: ContactSpec
    signal: np.ndarray  # (19,)
    biotac_field: DeformationField
    digit_field: DeformationField

    @property
    def digit_spec(self) -> ContactSpec:
        return digit_contact(self.spec)


@dataclass(frozen=True)
class SamplingRanges:
    """Uniform sampling bounds.  ``u, v`` are in the DIGIT pad frame."""

    u: tuple[float, float] = (3.0, 17.0)
    v: tuple[float, float] = (3.0, 13.0)
    force: tuple[float, float] = (0.5, 5.0)
    radius: tuple[float, float] = (2.0, 6.0)
    angle: tuple[float, float] = (0.0, 360.0)

    def __post_init__(self):
        for name in ("u", "v", "force", "radius", "angle"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ContactError(f"bad range for {name}: {(lo, hi)}")
        if self.u[0] < 0 or self.u[1] > geo.DIGIT_WIDTH or self.v[0] < 0 or self.v[1] > geo.DIGIT_HEIGHT:
            raise ContactError("position ranges must lie on the DIGIT pad")
        if self.force[0] < 0:
            raise ContactError("force range must be non-negative")
        if self.radius[0] <= 0:
            raise ContactError("radius range must be positive")


def make_surface(kind: str) -> SensorSurface:
    """64x64 sample grid; rows run along y (axial), columns along x."""
    if kind == "biotac":
        theta = np.linspace(-math.pi / 2, math.pi / 2, GRID)
        axial = np.linspace(0.0, geo.BIOTAC_LENGTH, GRID)
        th, ax = np.meshgrid(theta, axial)
        r = geo.BIOTAC_RADIUS
        pos = np.stack([r * np.sin(th), ax, r * np.cos(th)], axis=-1)
        nrm = np.stack([np.sin(th), np.zeros_like(th), np.cos(th)], axis=-1)
        return SensorSurface(kind, pos, nrm, r * th, ax)
    if kind == "digit":
        x = np.linspace(0.0, geo.DIGIT_WIDTH, GRID)
        y = np.linspace(0.0, geo.DIGIT_HEIGHT, GRID)
        xx, yy = np.meshgrid(x, y)
        pos = np.stack([xx, yy, np.zeros_like(xx)], axis=-1)
        nrm = np.zeros_like(pos)
        nrm[..., 2] = 1.0
        return SensorSurface(kind, pos, nrm, xx, yy)
    raise ValueError(f"unknown sensor kind {kind!r}")


_SURFACES: dict[str, SensorSurface] = {}


def surface(kind: str) -> SensorSurface:
    """Cached :func:`make_surface`; treat the arrays as read-only."""
    if kind not in _SURFACES:
        _SURFACES[kind] = make_surface(kind)
    return _SURFACES[kind]


def _point_and_normal(surf: SensorSurface, x: float, y: float) -> tuple[np.ndarray, np.ndarray]:
    if surf.kind == "biotac":
        th = x / geo.BIOTAC_RADIUS
        r = geo.BIOTAC_RADIUS
        n = np.array([math.sin(th), 0.0, math.cos(th)])
        return np.array([r * n[0], y, r * n[2]]), n
    return np.array([x, y, 0.0]), np.array([0.0, 0.0, 1.0])


def indent_sphere(surf: SensorSurface, spec: ContactSpec) -> DeformationField:
    """Normal displacement field of a rigid sphere pressed to ``spec.depth``.

    The patch radius is the Hertzian ``a = sqrt(R d)``.  Inside it each node
    moves along its inward normal to the sphere surface; outside, the field
    is ``w_edge * exp(-(rho - a) / SKIRT_LENGTH)`` where ``w_edge`` is the flat
    surface's penetration at ``rho = a``.
    """
    if not surf.contains(spec.u, spec.v):
        raise ContactError(f"contact centre ({spec.u}, {spec.v}) outside the {surf.kind} active area")
    d = spec.depth
    if d == 0.0:
        return DeformationField(np.zeros(surf.shape), surf.kind)
    R = spec.indenter_radius
    p0, n0 = _point_and_normal(surf, spec.u, spec.v)
    centre = p0 + (R - d) * n0

    a = math.sqrt(R * min(d, R))
    w_edge = d - R + math.sqrt(R * R - a * a)
    rho = np.hypot(surf.plane_x - spec.u, surf.plane_y - spec.v)

    # smallest inward push t >= 0 that takes the node back onto the sphere
    w = surf.positions - centre
    wn = np.einsum("ijk,ijk->ij", w, surf.normals)
    disc = wn * wn + R * R - np.einsum("ijk,ijk->ij", w, w)
    pen = np.where(disc > 0.0, wn + np.sqrt(np.maximum(disc, 0.0)), 0.0)

    skirt = w_edge * np.exp(-(rho - a) / SKIRT_LENGTH)
    values = np.where(rho < a, pen, skirt)
    return DeformationField(np.maximum(values, 0.0), surf.kind)


def _electrode_weights() -> np.ndarray:
    surf = surface("biotac")
    dx = geo.BIOTAC_RADIUS * math.pi / (GRID - 1)
    dy = geo.BIOTAC_LENGTH / (GRID - 1)
    px = surf.plane_x.reshape(-1)
    py = surf.plane_y.reshape(-1)
    d2 = (px[None, :] - ELECTRODE_SITES[:, :1]) ** 2 + (py[None, :] - ELECTRODE_SITES[:, 1:]) ** 2
    s2 = ELECTRODE_SIGMA**2
    return np.exp(-0.5 * d2 / s2) * (dx * dy / (2.0 * math.pi * s2))


ELECTRODE_WEIGHTS = _electrode_weights()  # (19, 4096)


def electrode_signals(field: DeformationField, gain: float = ELECTRODE_GAIN) -> np.ndarray:
    """Nineteen electrode values, each a Gaussian-weighted sum of displacement.

    The window is a unit-mass 2-D Gaussian discretised with the grid cell
    area, so a value is minus the locally averaged indentation in mm.
    """
    if field.kind != "biotac":
        raise ValueError("electrode signals are defined for BioTac fields only")
    return -gain * (ELECTRODE_WEIGHTS @ field.flat())


def digit_contact(spec: ContactSpec) -> ContactSpec:
    p = geo.map_unfolded_to_digit(geo.PlanePoint(spec.u, spec.v))
    return ContactSpec(p.x, p.y, spec.force, spec.indenter_radius, spec.angle)


def make_sample(spec: ContactSpec) -> PairedSample:
    bt = indent_sphere(surface("biotac"), spec)
    dg = indent_sphere(surface("digit"), digit_contact(spec))
    return PairedSample(spec, electrode_signals(bt), bt, dg)


def _f32(x: float) -> float:
    return float(np.float32(x))


def sample_spec(rng: Prng, ranges: SamplingRanges) -> ContactSpec:
    """One contact drawn on the pad, stored in the unfolded BioTac frame.

    Values are rounded to float32 so a spec survives a file round trip
    unchanged and regenerating from it reproduces the fields exactly.
    """
    du = rng.uniform(*ranges.u)
    dv = rng.uniform(*ranges.v)
    force = _f32(rng.uniform(*ranges.force))
    radius = _f32(rng.uniform(*ranges.radius))
    angle = _f32(rng.uniform(*ranges.angle))
    p = geo.map_digit_to_unfolded(geo.PlanePoint(du, dv))
    x = min(max(_f32(p.x), -geo.UNFOLDED_HALF_WIDTH), geo.UNFOLDED_HALF_WIDTH)
    y = min(max(_f32(p.y), 0.0), geo.BIOTAC_LENGTH)
    return ContactSpec(x, y, force, radius, angle)


def generate_paired_dataset(
    n: int, seed: int, ranges: SamplingRanges | None = None
) -> list[PairedSample]:
    """``n`` paired samples; sample ``i`` uses the substream ``Prng(seed + i)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    ranges = ranges or SamplingRanges()
    return [make_sample(sample_spec(Prng(seed + i), ranges)) for i in range(n)]


def stack_dataset(samples: Sequence[PairedSample]) -> dict[str, np.ndarray]:
    """Arrays ``specs (n,5)``, ``signals (n,19)``, ``biotac``/``digit (n,4096)``."""
    return {
        "specs": np.array([s.spec.as_tuple() for s in samples]),
        "signals": np.stack([s.signal for s in samples]),
        "biotac": np.stack([s.biotac_field.flat() for s in samples]),
        "digit": np.stack([s.digit_field.flat() for s in samples]),
    }


def field_centroid(field: DeformationField) -> tuple[float, float]:
    """Deformation-weighted mean planar position (mm); NaN for an empty field."""
    surf = surface(field.kind)
    w = field.values
    total = float(w.sum())
    if total <= 0.0:
        return (math.nan, math.nan)
    return float((w * surf.plane_x).sum() / total), float((w * surf.plane_y).sum() / total)
