"""Evaluation figures, rendered off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import pipeline  # noqa: E402
from .contact import PairedSample  # noqa: E402
from .render import CalibrationTable  # noqa: E402


def conversion_grid(
    models: pipeline.PipelineModels, calib: CalibrationTable, samples: Sequence[PairedSample]
) -> plt.Figure:
    """One row per sample: signal, true and predicted fields, true and converted images."""
    titles = ("signal", "BioTac field", "predicted BioTac", "DIGIT field", "predicted DIGIT",
              "rendered truth", "converted")
    fig, axes = plt.subplots(len(samples), len(titles), figsize=(2.0 * len(titles), 2.2 * len(samples)),
                             squeeze=False)
    for row, s in zip(axes, samples):
        conv = pipeline.convert(models, calib, s.signal)
        row[0].bar(np.arange(len(s.signal)), s.signal, color="0.3")
        vmax = max(float(s.biotac_field.values.max()), 1e-9)
        for ax, f in zip(row[1:5], (s.biotac_field, conv.biotac_field, s.digit_field, conv.digit_field)):
            ax.imshow(f.values, origin="lower", cmap="viridis", vmin=0.0, vmax=vmax)
        row[5].imshow(pipeline.render_field(s.digit_field, calib).pixels)
        row[6].imshow(conv.image.pixels)
        for ax in row[1:]:
            ax.set_xticks([])
            ax.set_yticks([])
    for ax, title in zip(axes[0], titles):
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return fig


def error_histograms(report: pipeline.EvalReport) -> plt.Figure:
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.hist(report.centroid_error_mm, bins=30, color="tab:blue", alpha=0.7, label="from true BioTac field")
    a.hist(report.end_to_end_centroid_mm, bins=30, color="tab:orange", alpha=0.7, label="from signal")
    a.axvline(report.centroid_tol_mm, color="k", ls="--", lw=1)
    a.set_xlabel("DIGIT centroid error (mm)")
    a.set_ylabel("samples")
    a.legend(fontsize=8)
    b.hist(report.depth_rel_error, bins=30, color="tab:blue", alpha=0.7)
    b.hist(report.end_to_end_depth_rel, bins=30, color="tab:orange", alpha=0.7)
    b.axvline(report.depth_tol, color="k", ls="--", lw=1)
    b.set_xlabel("relative max-depth error")
    fig.tight_layout()
    return fig


def write_eval_figures(
    report_path,
    models: pipeline.PipelineModels,
    calib: CalibrationTable,
    samples: Sequence[PairedSample],
    report: pipeline.EvalReport,
) -> list[Path]:
    """Write ``<stem>_conversions.png`` and ``<stem>_errors.png`` beside the report."""
    from .formats import atomic_write

    base = Path(report_path)
    out = []
    for suffix, fig in (("conversions", conversion_grid(models, calib, samples)),
                        ("errors", error_histograms(report))):
        path = base.with_name(f"{base.stem}_{suffix}.png")
        with atomic_write(path) as fh:
            fig.savefig(fh, format="png", dpi=80, metadata={"Software": None})
        plt.close(fig)
        out.append(path)
    return out
