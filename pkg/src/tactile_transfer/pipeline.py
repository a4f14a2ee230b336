"""Training schedule, the signal-to-image chain, and evaluation metrics.

The chain has three stages.  Stage one maps an electrode frame to a BioTac
deformation field through the signal VAE, the signal-to-mesh projection and
the BioTac mesh decoder.  Stage two re-encodes that field and projects it into
the DIGIT mesh latent space.  Stage three rasterizes the DIGIT field into a
height map and renders it with the calibrated polynomial table.

All inference uses encoder means, and every predicted field is clamped at 0.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import geometry as geo
from .contact import GRID, DeformationField, PairedSample, field_centroid, stack_dataset
from .nn import Layer, MlpModel, NetSpec, TrainHyper, VaeModel, r2_score, train_network
from .numerics import Prng, ShapeError
from .render import CalibrationTable, TactileImage, background_image, image_centroid, render_taxim, rmse

log = logging.getLogger(__name__)

NETS = ("svb", "mvb", "mvd", "s2mpn", "m2mpn")
MIN_SAMPLES = 10

# Training-time input scales.  Raw fields are ~0.1 mm and raw signals ~0.04,
# small enough that the KL term wins and the posterior collapses.  The scales
# are folded into the first encoder and last decoder layer after training, so
# stored models work in physical units.
FIELD_SCALE = 10.0
SIGNAL_SCALE = 25.0

# Largest translation, in grid steps, used by the mesh VAE augmentation.
SHIFT_PX = 4


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineModels:
    svb: VaeModel
    mvb: VaeModel
    mvd: VaeModel
    s2mpn: MlpModel
    m2mpn: MlpModel

    def __post_init__(self):
        for name in NETS:
            if getattr(self, name) is None:
                raise PipelineError(f"model {name} is missing")
        if self.svb.n_in != 19:
            raise ShapeError(f"svb expects 19 electrode values, got {self.svb.n_in}")
        for name in ("mvb", "mvd"):
            if getattr(self, name).n_in != GRID * GRID:
                raise ShapeError(f"{name} expects {GRID * GRID} field values")
        links = (
            (self.s2mpn.n_in, self.svb.latent_dim, "s2mpn input", "svb latent"),
            (self.s2mpn.n_out, self.mvb.latent_dim, "s2mpn output", "mvb latent"),
            (self.m2mpn.n_in, self.mvb.latent_dim, "m2mpn input", "mvb latent"),
            (self.m2mpn.n_out, self.mvd.latent_dim, "m2mpn output", "mvd latent"),
        )
        for a, b, left, right in links:
            if a != b:
                raise ShapeError(f"{left} ({a}) does not match {right} ({b})")


@dataclass(frozen=True)
class PipelineConfig:
    """Architectures and training hyperparameters for the five networks.

    ``hidden`` gives the hidden layer sizes of each network: the VAE trunk for
    svb/mvb/mvd (the decoder mirrors it) and the MLP body for the projections.
    """

    hypers: dict = field(default_factory=lambda: dict(DEFAULT_HYPERS))
    hidden: dict = field(default_factory=lambda: dict(DEFAULT_HIDDEN))
    latent: dict = field(default_factory=lambda: dict(DEFAULT_LATENT))
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        for table in (self.hypers, self.hidden):
            missing = set(NETS) - set(table)
            if missing:
                raise ValueError(f"no entry for {sorted(missing)}")
        for name in ("svb", "mvb", "mvd"):
            if self.latent.get(name, 0) < 1:
                raise ValueError(f"{name} latent size must be positive")


DEFAULT_HIDDEN = {
    "svb": (128, 64),
    "mvb": (512, 128),
    "mvd": (512, 128),
    "s2mpn": (64, 64),
    "m2mpn": (64, 64),
}
DEFAULT_LATENT = {"svb": 8, "mvb": 16, "mvd": 16}
DEFAULT_HYPERS = {
    "svb": TrainHyper(epochs=100, seed=1),
    "mvb": TrainHyper(epochs=300, learning_rate=2e-3, schedule="cosine", precision="float32", seed=2),
    "mvd": TrainHyper(epochs=300, learning_rate=2e-3, schedule="cosine", precision="float32", seed=3),
    "s2mpn": TrainHyper(epochs=200, schedule="cosine", seed=4),
    "m2mpn": TrainHyper(epochs=400, schedule="cosine", seed=5),
}


def net_spec(name: str, config: PipelineConfig) -> NetSpec:
    hidden = tuple(config.hidden[name])
    if name == "svb":
        return NetSpec("vae", (19,) + hidden, config.latent["svb"])
    if name in ("mvb", "mvd"):
        return NetSpec("vae", (GRID * GRID,) + hidden, config.latent[name])
    src, dst = ("svb", "mvb") if name == "s2mpn" else ("mvb", "mvd")
    return NetSpec("mlp", (config.latent[src],) + hidden + (config.latent[dst],))


# -- data helpers -----------------------------------------------------------


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded 80/10/10 train/validation/test split of ``range(n)``."""
    if n < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n}")
    order = Prng(seed).permutation(n)
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def mirror_fields(x: np.ndarray, flip_x: np.ndarray, flip_y: np.ndarray) -> np.ndarray:
    """Mirror flattened 64x64 fields along columns and/or rows, per sample."""
    v = x.reshape(-1, GRID, GRID).copy()
    v[flip_x] = v[flip_x][:, :, ::-1]
    v[flip_y] = v[flip_y][:, ::-1, :]
    return v.reshape(x.shape)


def shift_fields(x: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Translate flattened 64x64 fields by whole grid steps, filling with zeros.

    Sample ``i`` moves by ``rows[i]`` rows and ``cols[i]`` columns.
    """
    n = len(x)
    k = int(max(np.max(np.abs(rows), initial=0), np.max(np.abs(cols), initial=0)))
    padded = np.pad(x.reshape(n, GRID, GRID), ((0, 0), (k, k), (k, k)))
    grid = np.arange(GRID)
    r = grid[None, :] - rows[:, None] + k
    c = grid[None, :] - cols[:, None] + k
    out = padded[np.arange(n)[:, None, None], r[:, :, None], c[:, None, :]]
    return out.reshape(x.shape)


def augment_fields(x: np.ndarray, rng: Prng, max_shift: int = SHIFT_PX) -> np.ndarray:
    """Batch augmentation with random mirror images and small translations.

    Each field is flipped in x and in y with probability 1/2, then shifted by
    a uniform whole number of grid steps in ``[-max_shift, max_shift]`` along
    each axis.  A sphere pressed on the cylinder or on the flat pad produces
    the same field, moved, when its contact point moves by whole grid steps,
    and both grids and the default ranges are mirror-symmetric.  The
    augmented fields are therefore valid contacts up to truncation at the
    grid border.
    """
    n = len(x)
    u = rng.uniform_array(4 * n)
    out = mirror_fields(x, u[:n] < 0.5, u[n:2 * n] < 0.5)
    if max_shift == 0:
        return out
    steps = np.floor(u[2 * n:] * (2 * max_shift + 1)).astype(np.int64) - max_shift
    return shift_fields(out, steps[:n], steps[n:])


def all_mirrors(x: np.ndarray) -> np.ndarray:
    """Stack the four mirror images (none, x, y, both) of every field."""
    n = len(x)
    out = []
    for fx, fy in ((False, False), (True, False), (False, True), (True, True)):
        out.append(mirror_fields(x, np.full(n, fx), np.full(n, fy)))
    return np.concatenate(out)


def fold_scale(vae: VaeModel, scale: float) -> VaeModel:
    """Return a copy of a VAE trained on ``scale * x`` that accepts raw ``x``."""
    trunk, mu, logvar, decoder = vae.copy().parts()
    first = trunk.layers[0]
    trunk.layers[0] = Layer(first.weights * scale, first.bias, first.activation)
    last = decoder.layers[-1]
    decoder.layers[-1] = Layer(last.weights / scale, last.bias / scale, last.activation)
    return VaeModel(trunk, mu, logvar, decoder)


# -- training ---------------------------------------------------------------


@dataclass
class TrainReport:
    """Held-out reconstruction quality and wall time of each network."""

    r2: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)


def train_vae(name: str, data: np.ndarray, config: PipelineConfig) -> tuple[VaeModel, list[float]]:
    scale = SIGNAL_SCALE if name == "svb" else FIELD_SCALE
    augment = augment_fields if (config.augment and name != "svb") else None
    res = train_network(net_spec(name, config), data * scale, config.hypers[name], augment=augment)
    return fold_scale(res.model, scale), res.history


def train_projection(
    name: str, src: np.ndarray, dst: np.ndarray, config: PipelineConfig
) -> tuple[MlpModel, list[float]]:
    res = train_network(net_spec(name, config), src, config.hypers[name], targets=dst)
    return res.model, res.history


def train_pipeline(
    dataset: Sequence[PairedSample] | dict,
    config: PipelineConfig | None = None,
    nets: Sequence[str] = NETS,
    models: dict | None = None,
    report: TrainReport | None = None,
) -> dict:
    """Train the networks named in ``nets`` on the training split of ``dataset``.

    The VAEs are independent.  The projections are fit on encoder means, so
    S2MPN needs SVB and MVB, and M2MPN needs MVB and MVD; these come from
    ``models`` when they are not trained in the same call.  Returns a dict of
    all available models by name.
    """
    config = config or PipelineConfig()
    arrays = dataset if isinstance(dataset, dict) else stack_dataset(dataset)
    n = len(arrays["signals"])
    train_idx, _, test_idx = split_indices(n, config.seed)
    out = dict(models or {})
    report = report if report is not None else TrainReport()
    unknown = set(nets) - set(NETS)
    if unknown:
        raise ValueError(f"unknown networks {sorted(unknown)}")
    key = {"svb": "signals", "mvb": "biotac", "mvd": "digit"}

    for name in ("svb", "mvb", "mvd"):
        if name not in nets:
            continue
        t0 = time.perf_counter()
        out[name], report.history[name] = train_vae(name, arrays[key[name]][train_idx], config)
        report.seconds[name] = time.perf_counter() - t0
        held = arrays[key[name]][test_idx]
        report.r2[name] = r2_score(out[name].decode(out[name].encode_mean(held)), held)
        log.info("%s trained in %.1f s, held-out R2 %.4f", name, report.seconds[name], report.r2[name])

    for name, (src, dst) in (("s2mpn", ("svb", "mvb")), ("m2mpn", ("mvb", "mvd"))):
        if name not in nets:
            continue
        for need in (src, dst):
            if need not in out:
                raise PipelineError(f"{name} needs a trained {need}")
        t0 = time.perf_counter()
        if name == "s2mpn":
            x = out["svb"].encode_mean(arrays["signals"][train_idx])
            y = out["mvb"].encode_mean(arrays["biotac"][train_idx])
        else:
            b, d = arrays["biotac"][train_idx], arrays["digit"][train_idx]
            if config.augment:
                b, d = all_mirrors(b), all_mirrors(d)
            x, y = out["mvb"].encode_mean(b), out["mvd"].encode_mean(d)
        out[name], report.history[name] = train_projection(name, x, y, config)
        report.seconds[name] = time.perf_counter() - t0
        log.info("%s trained in %.1f s", name, report.seconds[name])
    return out


# -- inference --------------------------------------------------------------


def _check_models(models) -> None:
    if not isinstance(models, PipelineModels):
        raise PipelineError("a complete PipelineModels set is required")


def _as_batch(x: np.ndarray, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1 or (x.ndim == 2 and x.shape == (GRID, GRID) and width == GRID * GRID)
    batch = x.reshape(1, -1) if single else x.reshape(len(x), -1)
    if batch.shape[1] != width:
        raise ShapeError(f"{what} needs {width} values per sample, got {batch.shape[1]}")
    return batch, single


def signal_to_biotac_values(models: PipelineModels, signals: np.ndarray) -> np.ndarray:
    """Stage one on a batch: ``(n, 19)`` signals to ``(n, 4096)`` BioTac fields."""
    _check_models(models)
    x, _ = _as_batch(signals, 19, "signal")
    z = models.s2mpn(models.svb.encode_mean(x))
    return np.maximum(models.mvb.decode(z), 0.0)


def biotac_to_digit_values(models: PipelineModels, fields: np.ndarray) -> np.ndarray:
    """Stage two on a batch: ``(n, 4096)`` BioTac fields to DIGIT fields."""
    _check_models(models)
    x, _ = _as_batch(fields, GRID * GRID, "field")
    z = models.m2mpn(models.mvb.encode_mean(x))
    return np.maximum(models.mvd.decode(z), 0.0)


def signal_to_biotac_field(models: PipelineModels, signal: np.ndarray) -> DeformationField:
    values = signal_to_biotac_values(models, np.asarray(signal).reshape(1, -1))
    return DeformationField(values.reshape(GRID, GRID), "biotac")


def biotac_field_to_digit_field(models: PipelineModels, field: DeformationField) -> DeformationField:
    if field.kind != "biotac":
        raise ValueError(f"expected a BioTac field, got {field.kind!r}")
    values = biotac_to_digit_values(models, field.values.reshape(1, -1))
    return DeformationField(values.reshape(GRID, GRID), "digit")


def signal_to_digit_direct(models: PipelineModels, signal: np.ndarray) -> DeformationField:
    """Alternative chain feeding the S2MPN output straight into M2MPN.

    Skips the decode and re-encode through MVB between stages one and two.
    """
    _check_models(models)
    x, _ = _as_batch(signal, 19, "signal")
    z = models.m2mpn(models.s2mpn(models.svb.encode_mean(x)))
    return DeformationField(np.maximum(models.mvd.decode(z), 0.0).reshape(GRID, GRID), "digit")


@dataclass(frozen=True)
class Conversion:
    """The rendered image and every intermediate of one conversion."""

    image: TactileImage
    biotac_field: DeformationField
    digit_field: DeformationField
    heightmap: geo.HeightMap


def convert(
    models: PipelineModels,
    calib: CalibrationTable,
    signal: np.ndarray,
    direct: bool = False,
    sigma_px: float = geo.DEFAULT_SIGMA_PX,
) -> Conversion:
    """Run the full chain on one 19-value electrode frame."""
    biotac = signal_to_biotac_field(models, signal)
    digit = signal_to_digit_direct(models, signal) if direct else biotac_field_to_digit_field(models, biotac)
    height = geo.gaussian_smooth(geo.rasterize_heightmap(digit), sigma_px)
    return Conversion(render_taxim(height, calib), biotac, digit, height)


# -- evaluation -------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Per-sample metrics and their aggregates.

    ``centroid_error_mm`` and ``depth_rel_error`` compare DIGIT fields
    predicted from the true BioTac field (stage two) with the ground truth.
    ``end_to_end_*`` use the field predicted from the signal (stages one and
    two).  The reconstruction errors are the mean squared autoencoding errors
    of MVB and MVD on each sample.
    """

    centroid_error_mm: np.ndarray
    depth_rel_error: np.ndarray
    biotac_recon_mse: np.ndarray
    digit_recon_mse: np.ndarray
    end_to_end_centroid_mm: np.ndarray
    end_to_end_depth_rel: np.ndarray
    centroid_tol_mm: float = 1.5
    depth_tol: float = 0.2

    def __post_init__(self):
        n = len(self.centroid_error_mm)
        if n == 0:
            raise ValueError("an evaluation report needs at least one sample")
        for name in METRICS:
            v = getattr(self, name)
            if len(v) != n:
                raise ShapeError(f"{name} has {len(v)} entries, expected {n}")
            if np.any(v < 0):
                raise ValueError(f"{name} has negative entries")

    @property
    def count(self) -> int:
        return len(self.centroid_error_mm)

    @property
    def centroid_pass_rate(self) -> float:
        return float(np.mean(self.centroid_error_mm <= self.centroid_tol_mm))

    @property
    def depth_pass_rate(self) -> float:
        return float(np.mean(self.depth_rel_error <= self.depth_tol))

    @property
    def end_to_end_pass_rate(self) -> float:
        return float(np.mean(self.end_to_end_centroid_mm <= self.centroid_tol_mm))

    def summary(self) -> dict[str, float]:
        out: dict[str, float] = {"count": float(self.count)}
        for name in METRICS:
            v = getattr(self, name)
            out[f"{name}.mean"] = float(np.mean(v))
            out[f"{name}.median"] = float(np.median(v))
            out[f"{name}.max"] = float(np.max(v))
        out["centroid_pass_rate"] = self.centroid_pass_rate
        out["depth_pass_rate"] = self.depth_pass_rate
        out["end_to_end_pass_rate"] = self.end_to_end_pass_rate
        return out


METRICS = (
    "centroid_error_mm",
    "depth_rel_error",
    "biotac_recon_mse",
    "digit_recon_mse",
    "end_to_end_centroid_mm",
    "end_to_end_depth_rel",
)

# A predicted field with no deformation has no centroid; score it as a miss
# at the diagonal of the DIGIT pad rather than propagating NaN.
_NO_CONTACT_MM = math.hypot(geo.DIGIT_WIDTH, geo.DIGIT_HEIGHT)


def centroid_distance(pred: DeformationField, truth: DeformationField) -> float:
    px, py = field_centroid(pred)
    tx, ty = field_centroid(truth)
    if math.isnan(tx):
        raise ValueError("ground-truth field has no deformation")
    if math.isnan(px):
        return _NO_CONTACT_MM
    return math.hypot(px - tx, py - ty)


def depth_error(pred: np.ndarray, truth: np.ndarray) -> float:
    peak = float(np.max(truth))
    if peak <= 0.0:
        raise ValueError("ground-truth field has no deformation")
    return abs(float(np.max(pred)) - peak) / peak


def evaluate_predictions(
    digit_pred: np.ndarray,
    digit_truth: np.ndarray,
    e2e_pred: np.ndarray | None = None,
    biotac_recon: np.ndarray | None = None,
    biotac_truth: np.ndarray | None = None,
    digit_recon: np.ndarray | None = None,
) -> EvalReport:
    """Score predicted DIGIT fields (rows of 4096 values) against ground truth.

    Optional arguments default to the ground truth, which contributes zero error.
    """
    digit_truth = np.atleast_2d(digit_truth)
    digit_pred = np.atleast_2d(digit_pred)
    if len(digit_truth) == 0:
        raise ValueError("empty test set")
    e2e_pred = digit_truth if e2e_pred is None else np.atleast_2d(e2e_pred)
    digit_recon = digit_truth if digit_recon is None else np.atleast_2d(digit_recon)
    if biotac_truth is None:
        biotac_truth = biotac_recon = np.zeros((len(digit_truth), 1))
    elif biotac_recon is None:
        biotac_recon = biotac_truth

    def as_field(v):
        return DeformationField(np.asarray(v).reshape(GRID, GRID), "digit")

    cen, dep, e2e_cen, e2e_dep = [], [], [], []
    for p, e, t in zip(digit_pred, e2e_pred, digit_truth):
        cen.append(centroid_distance(as_field(p), as_field(t)))
        dep.append(depth_error(p, t))
        e2e_cen.append(centroid_distance(as_field(e), as_field(t)))
        e2e_dep.append(depth_error(e, t))
    return EvalReport(
        centroid_error_mm=np.array(cen),
        depth_rel_error=np.array(dep),
        biotac_recon_mse=np.mean((np.atleast_2d(biotac_recon) - biotac_truth) ** 2, axis=1),
        digit_recon_mse=np.mean((digit_recon - digit_truth) ** 2, axis=1),
        end_to_end_centroid_mm=np.array(e2e_cen),
        end_to_end_depth_rel=np.array(e2e_dep),
    )


def evaluate(models: PipelineModels, samples: Sequence[PairedSample] | dict) -> EvalReport:
    """Evaluate the trained chain on a nonempty set of paired samples."""
    _check_models(models)
    arrays = samples if isinstance(samples, dict) else stack_dataset(samples) if len(samples) else None
    if arrays is None or len(arrays["signals"]) == 0:
        raise ValueError("empty test set")
    b, d = arrays["biotac"], arrays["digit"]
    return evaluate_predictions(
        digit_pred=biotac_to_digit_values(models, b),
        digit_truth=d,
        e2e_pred=biotac_to_digit_values(models, signal_to_biotac_values(models, arrays["signals"])),
        biotac_recon=models.mvb.decode(models.mvb.encode_mean(b)),
        biotac_truth=b,
        digit_recon=models.mvd.decode(models.mvd.encode_mean(d)),
    )


def image_centroid_error(pred: TactileImage, truth: TactileImage, background: np.ndarray) -> float:
    """Pixel distance between the deformation centroids of two rendered images."""
    px, py = image_centroid(pred, background)
    tx, ty = image_centroid(truth, background)
    if math.isnan(tx):
        raise ValueError("ground-truth image shows no contact")
    if math.isnan(px):
        return math.hypot(geo.IMAGE_WIDTH, geo.IMAGE_HEIGHT)
    return math.hypot(px - tx, py - ty)


def render_field(field: DeformationField, calib: CalibrationTable, sigma_px: float = geo.DEFAULT_SIGMA_PX) -> TactileImage:
    """Stage three alone: rasterize, smooth and render a DIGIT field."""
    return render_taxim(geo.gaussian_smooth(geo.rasterize_heightmap(field), sigma_px), calib)


@dataclass(frozen=True)
class RenderCheck:
    """Image-space checks of the full chain.

    ``centroid_px`` holds, per signal, the distance between the deformation
    centroids of the converted image and of the image rendered from the
    ground-truth DIGIT field.  ``baseline_rmse`` compares the conversion of an
    all-zero signal with the flat background image.
    """

    centroid_px: np.ndarray
    baseline_rmse: float
    centroid_tol_px: float = 10.0

    @property
    def passed(self) -> int:
        return int(np.sum(self.centroid_px <= self.centroid_tol_px))


def render_checks(models: PipelineModels, calib: CalibrationTable, samples: Sequence[PairedSample]) -> RenderCheck:
    background = calib.background
    errs = []
    for s in samples:
        pred = convert(models, calib, s.signal).image
        errs.append(image_centroid_error(pred, render_field(s.digit_field, calib), background))
    baseline = convert(models, calib, np.zeros(19)).image
    return RenderCheck(np.array(errs), rmse(baseline, background_image(calib)))


def format_report(report: EvalReport, renders: RenderCheck | None = None) -> str:
    """Tab-delimited report: a summary block, then one row per sample."""
    lines = ["# summary", "metric\tvalue"]
    for key, value in report.summary().items():
        lines.append(f"{key}\t{value:.6g}")
    if renders is not None:
        lines.append(f"image_centroid_px.median\t{float(np.median(renders.centroid_px)):.6g}")
        lines.append(f"image_centroid_pass\t{renders.passed}/{len(renders.centroid_px)}")
        lines.append(f"baseline_rmse\t{renders.baseline_rmse:.6g}")
    lines += ["", "# samples", "index\t" + "\t".join(METRICS)]
    for i in range(report.count):
        row = "\t".join(f"{getattr(report, m)[i]:.6g}" for m in METRICS)
        lines.append(f"{i}\t{row}")
    return "\n".join(lines) + "\n"
