import math

import numpy as np
import pytest

from tactile_transfer import contact as c
from tactile_transfer import geometry as geo
from tactile_transfer import nn, pipeline as pl, render
from tactile_transfer.numerics import Prng, ShapeError


def tiny_config(seed=0, epochs=3):
    hypers = {name: nn.TrainHyper(epochs=epochs, batch_size=8, seed=i) for i, name in enumerate(pl.NETS)}
    hidden = {"svb": (8,), "mvb": (12,), "mvd": (12,), "s2mpn": (6,), "m2mpn": (6,)}
    return pl.PipelineConfig(hypers=hypers, hidden=hidden, latent={"svb": 3, "mvb": 4, "mvd": 4}, seed=seed)


@pytest.fixture(scope="module")
def samples():
    return c.generate_paired_dataset(20, seed=5)


@pytest.fixture(scope="module")
def models(samples):
    return pl.PipelineModels(**pl.train_pipeline(samples, tiny_config()))


@pytest.fixture(scope="module")
def calib():
    return render.fit_calibration(render.generate_calibration_set(render.LightRig(), max_samples=20_000))


def test_split_sizes_and_disjoint():
    tr, va, te = pl.split_indices(2000, seed=3)
    assert (len(tr), len(va), len(te)) == (1600, 200, 200)
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(2000))
    again = pl.split_indices(2000, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip((tr, va, te), again))
    assert not np.array_equal(tr, pl.split_indices(2000, seed=4)[0])


def test_too_few_samples():
    with pytest.raises(ValueError):
        pl.split_indices(9, seed=0)
    with pytest.raises(ValueError):
        pl.train_pipeline(c.generate_paired_dataset(5, seed=1), tiny_config())


def test_training_deterministic(samples, models):
    again = pl.train_pipeline(samples, tiny_config())
    for name in pl.NETS:
        for p, q in zip(getattr(models, name).params(), again[name].params()):
            assert np.array_equal(p, q)


def test_projection_needs_its_vaes(samples):
    with pytest.raises(pl.PipelineError):
        pl.train_pipeline(samples, tiny_config(), nets=("s2mpn",))


def test_partial_training_reuses_given_models(samples, models):
    given = {"svb": models.svb, "mvb": models.mvb}
    out = pl.train_pipeline(samples, tiny_config(), nets=("s2mpn",), models=given)
    for p, q in zip(out["s2mpn"].params(), models.s2mpn.params()):
        assert np.array_equal(p, q)


def test_models_dimension_chain(models):
    bad = nn.init_mlp(Prng(0), [5, 4])
    with pytest.raises(ShapeError):
        pl.PipelineModels(models.svb, models.mvb, models.mvd, bad, models.m2mpn)
    with pytest.raises(pl.PipelineError):
        pl.PipelineModels(models.svb, models.mvb, models.mvd, models.s2mpn, None)


def test_fold_scale_matches_scaled_inputs():
    vae = nn.init_vae(Prng(2), [6, 5], 2)
    x = np.linspace(-0.1, 0.1, 18).reshape(3, 6)
    folded = pl.fold_scale(vae, 10.0)
    np.testing.assert_allclose(folded.encode_mean(x), vae.encode_mean(10 * x), rtol=1e-13, atol=1e-15)
    z = np.ones((1, 2))
    np.testing.assert_allclose(folded.decode(z), vae.decode(z) / 10, rtol=1e-13)


def test_mirror_is_involution_and_ordered():
    x = np.random.default_rng(0).random((3, 4096))
    flips = np.array([True, False, True])
    once = pl.mirror_fields(x, flips, ~flips)
    assert np.array_equal(pl.mirror_fields(once, flips, ~flips), x)
    quad = pl.all_mirrors(x)
    assert quad.shape == (12, 4096) and np.array_equal(quad[:3], x)
    assert np.array_equal(quad[3:6].reshape(3, 64, 64), x.reshape(3, 64, 64)[:, :, ::-1])


@pytest.mark.parametrize("kind", ["biotac", "digit"])
def test_mirrored_contact_gives_mirrored_field(kind):
    # the physical basis of the mirror augmentation
    surf = c.surface(kind)
    width = 0.0 if kind == "biotac" else geo.DIGIT_WIDTH
    height = geo.BIOTAC_LENGTH if kind == "biotac" else geo.DIGIT_HEIGHT
    x, y = (2.3, 6.1) if kind == "biotac" else (12.3, 6.1)
    f = c.indent_sphere(surf, c.ContactSpec(x, y, 2.0, 3.0)).values
    fx = c.indent_sphere(surf, c.ContactSpec(width - x, y, 2.0, 3.0)).values
    fy = c.indent_sphere(surf, c.ContactSpec(x, height - y, 2.0, 3.0)).values
    np.testing.assert_allclose(fx, f[:, ::-1], atol=1e-12)
    np.testing.assert_allclose(fy, f[::-1, :], atol=1e-12)


def test_stage_outputs_clamped_and_deterministic(models, samples):
    s = samples[0]
    a = pl.signal_to_biotac_field(models, s.signal)
    assert a.kind == "biotac" and a.values.shape == (64, 64) and a.values.min() >= 0
    assert np.array_equal(a.values, pl.signal_to_biotac_field(models, s.signal).values)
    d = pl.biotac_field_to_digit_field(models, s.biotac_field)
    assert d.kind == "digit" and d.values.min() >= 0
    with pytest.raises(ValueError):
        pl.biotac_field_to_digit_field(models, s.digit_field)
    with pytest.raises(ShapeError):
        pl.signal_to_biotac_field(models, np.zeros(18))


def test_batch_and_single_stage_agree(models, samples):
    arrays = c.stack_dataset(samples[:4])
    batch = pl.signal_to_biotac_values(models, arrays["signals"])
    # BLAS may reduce in a different order per batch size, so only to rounding
    for row, s in zip(batch, samples[:4]):
        single = pl.signal_to_biotac_field(models, s.signal).values
        np.testing.assert_allclose(row.reshape(64, 64), single, rtol=1e-12, atol=1e-15)


def test_untrained_models_rejected():
    with pytest.raises(pl.PipelineError):
        pl.signal_to_biotac_values({"svb": None}, np.zeros(19))


def test_convert_is_composition(models, calib, samples):
    sig = samples[1].signal
    out = pl.convert(models, calib, sig)
    b = pl.signal_to_biotac_field(models, sig)
    d = pl.biotac_field_to_digit_field(models, b)
    h = geo.gaussian_smooth(geo.rasterize_heightmap(d), geo.DEFAULT_SIGMA_PX)
    assert np.array_equal(out.biotac_field.values, b.values)
    assert np.array_equal(out.digit_field.values, d.values)
    assert np.array_equal(out.heightmap.data, h.data)
    assert out.image.pixels.tobytes() == render.render_taxim(h, calib).pixels.tobytes()
    assert out.image.pixels.tobytes() == pl.convert(models, calib, sig).image.pixels.tobytes()


def test_direct_chain(models, calib, samples):
    sig = samples[2].signal
    direct = pl.convert(models, calib, sig, direct=True)
    z = models.m2mpn(models.s2mpn(models.svb.encode_mean(sig[None])))
    expected = np.maximum(models.mvd.decode(z), 0).reshape(64, 64)
    assert np.array_equal(direct.digit_field.values, expected)


def test_perfect_predictions_score_zero(samples):
    arrays = c.stack_dataset(samples)
    rep = pl.evaluate_predictions(arrays["digit"], arrays["digit"])
    assert np.all(rep.centroid_error_mm == 0) and np.all(rep.depth_rel_error == 0)
    assert rep.centroid_pass_rate == 1.0 and rep.depth_pass_rate == 1.0


def test_evaluate_report_fields(models, samples):
    rep = pl.evaluate(models, samples[:6])
    assert rep.count == 6
    for key, value in rep.summary().items():
        assert math.isfinite(value) and value >= 0, key
    for rate in (rep.centroid_pass_rate, rep.depth_pass_rate, rep.end_to_end_pass_rate):
        assert 0.0 <= rate <= 1.0
    with pytest.raises(ValueError):
        pl.evaluate(models, [])


def test_empty_prediction_counts_as_miss(samples):
    truth = samples[0].digit_field.flat()[None]
    rep = pl.evaluate_predictions(np.zeros_like(truth), truth)
    assert rep.centroid_error_mm[0] == pytest.approx(math.hypot(20.0, 16.0))
    assert rep.centroid_pass_rate == 0.0 and rep.depth_rel_error[0] == 1.0


def test_centroid_error_hand_case():
    truth = np.zeros((64, 64))
    truth[10, 20] = 1.0
    pred = np.zeros((64, 64))
    pred[10, 23] = 0.5
    rep = pl.evaluate_predictions(pred.reshape(1, -1), truth.reshape(1, -1))
    surf = c.surface("digit")
    assert rep.centroid_error_mm[0] == pytest.approx(surf.plane_x[10, 23] - surf.plane_x[10, 20], abs=1e-12)
    assert rep.depth_rel_error[0] == 0.5


def test_report_text(models, calib, samples):
    rep = pl.evaluate(models, samples[:3])
    checks = pl.render_checks(models, calib, samples[:2])
    text = pl.format_report(rep, checks)
    lines = text.splitlines()
    assert lines[0] == "# summary" and "index\t" + "\t".join(pl.METRICS) in lines
    assert all(len(line.split("\t")) == len(pl.METRICS) + 1 for line in lines[-3:])
    assert len(checks.centroid_px) == 2 and checks.baseline_rmse >= 0


def test_shift_zero_is_identity_and_fills_zeros():
    x = np.random.default_rng(1).random((2, 4096))
    zero = np.zeros(2, dtype=int)
    assert np.array_equal(pl.shift_fields(x, zero, zero), x)
    moved = pl.shift_fields(x, np.array([2, 0]), np.array([0, -3])).reshape(2, 64, 64)
    v = x.reshape(2, 64, 64)
    assert np.array_equal(moved[0, 2:], v[0, :-2]) and not moved[0, :2].any()
    assert np.array_equal(moved[1, :, :-3], v[1, :, 3:]) and not moved[1, :, -3:].any()


@pytest.mark.parametrize("kind", ["biotac", "digit"])
def test_contact_moved_by_grid_steps_gives_shifted_field(kind):
    # the physical basis of the shift augmentation
    surf = c.surface(kind)
    i, j = 30, 28
    spec = c.ContactSpec(float(surf.plane_x[i, j]), float(surf.plane_y[i, j]), 1.5, 3.0)
    moved = c.ContactSpec(float(surf.plane_x[i + 2, j - 3]), float(surf.plane_y[i + 2, j - 3]), 1.5, 3.0)
    f = c.indent_sphere(surf, spec).values
    g = c.indent_sphere(surf, moved).values
    expected = pl.shift_fields(f.reshape(1, -1), np.array([2]), np.array([-3])).reshape(64, 64)
    # away from the border, where the shifted copy is truncated
    np.testing.assert_allclose(g[4:-4, 4:-4], expected[4:-4, 4:-4], atol=1e-12)


def test_augmentation_reproducible_and_bounded():
    x = np.random.default_rng(2).random((6, 4096))
    a = pl.augment_fields(x, Prng(3))
    assert np.array_equal(a, pl.augment_fields(x, Prng(3)))
    assert a.shape == x.shape and a.max() <= x.max()
    assert np.array_equal(np.sort(pl.augment_fields(x, Prng(3), max_shift=0).ravel()), np.sort(x.ravel()))
