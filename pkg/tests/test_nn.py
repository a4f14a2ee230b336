import math

import numpy as np
import pytest

from tactile_transfer import gradcheck, nn
from tactile_transfer.numerics import Prng, ShapeError


def layer(w, b, act="identity"):
    return nn.Layer(np.array(w, dtype=float), np.array(b, dtype=float), act)


def test_identity_layer_passes_input_through():
    model = nn.MlpModel([layer(np.eye(3), np.zeros(3))])
    v = np.array([[0.5, -2.0, 7.0]])
    np.testing.assert_array_equal(model(v), v)


def test_zero_tanh_layer_outputs_zero():
    model = nn.MlpModel([layer(np.zeros((2, 3)), np.zeros(2), "tanh")])
    np.testing.assert_array_equal(model(np.ones((1, 3))), np.zeros((1, 2)))


def test_two_layer_hand_computed():
    model = nn.MlpModel([
        layer([[1, 2], [3, 4]], [0.5, -0.5], "tanh"),
        layer([[1, -1], [0.5, 2]], [0.1, 0.0]),
    ])
    h1, h2 = math.tanh(1.5), math.tanh(2.5)
    expected = [h1 - h2 + 0.1, 0.5 * h1 + 2 * h2]
    np.testing.assert_allclose(model(np.array([[1.0, 0.0]]))[0], expected, rtol=0, atol=1e-15)


def test_forward_shape_error():
    model = nn.MlpModel([layer(np.eye(2), np.zeros(2))])
    with pytest.raises(ShapeError):
        nn.mlp_forward(model, np.ones((1, 3)))


def test_layers_must_chain():
    with pytest.raises(ShapeError):
        nn.MlpModel([layer(np.eye(2), np.zeros(2)), layer(np.eye(3), np.zeros(3))])


def test_backward_zero_output_grad():
    model = nn.init_mlp(Prng(1), [3, 5, 2])
    acts = nn.mlp_forward(model, np.ones((4, 3)))
    grads, gin = nn.mlp_backward(model, acts, np.zeros((4, 2)))
    assert all(not g.any() for g in grads) and not gin.any()


def test_backward_linear_layer_analytic():
    rng = np.random.default_rng(3)
    model = nn.MlpModel([layer(rng.standard_normal((2, 3)), np.zeros(2))])
    x = rng.standard_normal((1, 3))
    g = rng.standard_normal((1, 2))
    grads, _ = nn.mlp_backward(model, nn.mlp_forward(model, x), g)
    np.testing.assert_allclose(grads[0], g.T @ x, rtol=0, atol=1e-15)
    np.testing.assert_allclose(grads[1], g[0])


def test_backward_rejects_foreign_activations():
    model = nn.init_mlp(Prng(1), [3, 5, 2])
    with pytest.raises(ShapeError):
        nn.mlp_backward(model, [np.ones((1, 3))], np.ones((1, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_mlp_gradients_match_finite_differences(seed):
    check = gradcheck.random_mlp_case(Prng(seed))
    assert check.ok, check


@pytest.mark.parametrize("seed", range(5))
def test_vae_gradients_match_finite_differences(seed):
    check = gradcheck.random_vae_case(Prng(100 + seed))
    assert check.ok, check


def test_gradcheck_detects_wrong_gradient():
    model = nn.init_mlp(Prng(2), [2, 3, 1])
    x, y = np.ones((2, 2)), np.zeros((2, 1))
    _, grads = nn.mlp_loss_and_grads(model, x, y)
    grads[0] = grads[0] * 1.01
    check = gradcheck.compare(lambda: float(np.mean((model(x) - y) ** 2)), model.params(), grads)
    assert not check.ok


def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0])]
    state = nn.AdamState.zeros_like(p)
    nn.adam_step(state, p, [np.zeros(2)], nn.TrainHyper())
    np.testing.assert_array_equal(p[0], [1.0, -2.0])
    assert state.step == 1


def test_adam_first_two_steps_by_hand():
    hyper = nn.TrainHyper(learning_rate=0.1)
    p = [np.array([0.0])]
    state = nn.AdamState.zeros_like(p)
    nn.adam_step(state, p, [np.array([1.0])], hyper)
    # m = 0.1, v = 0.001 -> m_hat = v_hat = 1
    step1 = -0.1 * 1.0 / (1.0 + 1e-8)
    assert p[0][0] == pytest.approx(step1, rel=1e-12)
    nn.adam_step(state, p, [np.array([1.0])], hyper)
    # m = 0.19, v = 0.001999 -> bias-corrected both 1 again
    m_hat = 0.19 / (1 - 0.9**2)
    v_hat = 0.001999 / (1 - 0.999**2)
    step2 = step1 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p[0][0] == pytest.approx(step2, rel=1e-12)
    assert state.step == 2


def test_adam_length_mismatch():
    with pytest.raises(ShapeError):
        nn.adam_step(nn.AdamState.zeros_like([np.zeros(1)]), [np.zeros(1)], [], nn.TrainHyper())


def small_vae(seed=0):
    return nn.init_vae(Prng(seed), [5, 4], 2)


def test_encode_without_rng_is_mean():
    vae = small_vae()
    mu, _, z = nn.vae_encode(vae, np.ones((3, 5)))
    np.testing.assert_array_equal(z, mu)


def test_encode_vanishing_variance():
    vae = small_vae()
    vae.logvar_head.layers[0].weights[:] = 0.0
    vae.logvar_head.layers[0].bias[:] = -60.0
    mu, _, z = nn.vae_encode(vae, np.ones((3, 5)), rng=Prng(1))
    assert np.max(np.abs(z - mu)) <= 1e-10


def test_encode_sampling_reproducible():
    vae = small_vae()
    x = np.linspace(-1, 1, 10).reshape(2, 5)
    z1 = nn.vae_encode(vae, x, rng=Prng(9))[2]
    z2 = nn.vae_encode(vae, x, rng=Prng(9))[2]
    assert np.array_equal(z1, z2)
    assert not np.array_equal(z1, nn.vae_encode(vae, x)[2])


def test_vae_loss_zero_case():
    x = np.ones((2, 3))
    assert nn.vae_loss(x, x, np.zeros((2, 1)), np.zeros((2, 1)), 1.0) == (0.0, 0.0, 0.0)


def test_vae_loss_unit_mean_kl():
    total, recon, kl = nn.vae_loss(np.zeros((1, 2)), np.zeros((1, 2)), np.ones((1, 1)), np.zeros((1, 1)), 2.0)
    assert kl == pytest.approx(0.5) and total == pytest.approx(1.0) and recon == 0.0


def test_vae_loss_beta_zero():
    rng = np.random.default_rng(0)
    r, t, mu, lv = (rng.standard_normal((3, 4)) for _ in range(4))
    total, recon, _ = nn.vae_loss(r, t, mu, lv, 0.0)
    assert total == recon


def test_kl_nonnegative_and_zero_only_at_prior():
    rng = np.random.default_rng(1)
    for _ in range(200):
        mu = rng.standard_normal((4, 3))
        lv = rng.standard_normal((4, 3))
        assert nn.vae_loss(np.zeros(1), np.zeros(1), mu, lv, 1.0)[2] > 0.0
    assert nn.vae_loss(np.zeros(1), np.zeros(1), np.zeros((4, 3)), np.zeros((4, 3)), 1.0)[2] == 0.0


def linear_task(seed=0, n=600):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.5, 0.5, (4, 4))
    x = rng.uniform(-1, 1, (n, 4))
    return x, x @ a.T


def test_projection_learns_linear_map():
    x, y = linear_task()
    hyper = nn.TrainHyper(epochs=200, seed=4)
    res = nn.train_network(nn.NetSpec("mlp", (4, 64, 64, 4)), x[:500], hyper, targets=y[:500])
    mse = float(np.mean((res.model(x[500:]) - y[500:]) ** 2))
    assert mse <= 1e-4
    windows = np.array(res.history).reshape(-1, 10).mean(axis=1)
    assert np.all(np.diff(windows) <= 0.0)


def test_zero_epochs_returns_initial_model():
    x, y = linear_task(n=20)
    spec = nn.NetSpec("mlp", (4, 8, 4))
    res = nn.train_network(spec, x, nn.TrainHyper(epochs=0, seed=3), targets=y)
    init = nn.build_model(spec, Prng(3))
    assert res.history == []
    for a, b in zip(res.model.params(), init.params()):
        assert np.array_equal(a, b)


def test_training_is_bit_reproducible():
    x, _ = linear_task(n=100)
    spec = nn.NetSpec("vae", (4, 6), latent_dim=2)
    hyper = nn.TrainHyper(epochs=5, seed=12, batch_size=16)
    a = nn.train_network(spec, x, hyper)
    b = nn.train_network(spec, x, hyper)
    assert a.history == b.history
    for p, q in zip(a.model.params(), b.model.params()):
        assert np.array_equal(p, q)


def test_train_network_errors():
    spec = nn.NetSpec("mlp", (4, 8, 4))
    with pytest.raises(ValueError):
        nn.train_network(spec, np.zeros((0, 4)), nn.TrainHyper(), targets=np.zeros((0, 4)))
    with pytest.raises(ShapeError):
        nn.train_network(spec, np.zeros((5, 3)), nn.TrainHyper(), targets=np.zeros((5, 4)))


@pytest.mark.parametrize("kw", [dict(beta=-1.0), dict(learning_rate=0.0), dict(batch_size=0)])
def test_train_hyper_invariants(kw):
    with pytest.raises(ValueError):
        nn.TrainHyper(**kw)


def test_vae_invariants():
    vae = small_vae()
    with pytest.raises(ShapeError):
        nn.VaeModel(vae.encoder_trunk, vae.mu_head, vae.logvar_head, nn.init_mlp(Prng(0), [2, 3]))


def test_r2_perfect_and_mean():
    y = np.arange(12.0).reshape(4, 3)
    assert nn.r2_score(y, y) == 1.0
    assert nn.r2_score(np.broadcast_to(y.mean(axis=0), y.shape), y) == pytest.approx(0.0)


def test_cosine_schedule():
    hyper = nn.TrainHyper(learning_rate=0.01, epochs=4, schedule="cosine")
    rates = [hyper.rate_at(e) for e in range(4)]
    assert rates[0] == 0.01 and rates[2] == pytest.approx(0.005)
    assert np.all(np.diff(rates) < 0) and rates[-1] > 0
    assert nn.TrainHyper(learning_rate=0.01).rate_at(3) == 0.01
    with pytest.raises(ValueError):
        nn.TrainHyper(schedule="step")


def test_backward_without_input_grad():
    model = nn.init_mlp(Prng(5), [3, 4, 2])
    acts = nn.mlp_forward(model, np.ones((2, 3)))
    full, gin = nn.mlp_backward(model, acts, np.ones((2, 2)))
    part, none = nn.mlp_backward(model, acts, np.ones((2, 2)), input_grad=False)
    assert none is None and gin.shape == (2, 3)
    assert all(np.array_equal(a, b) for a, b in zip(full, part))


def test_float32_training():
    x, _ = linear_task(n=64)
    spec = nn.NetSpec("vae", (4, 6), latent_dim=2)
    hyper = nn.TrainHyper(epochs=3, seed=2, batch_size=16, precision="float32")
    a = nn.train_network(spec, x, hyper)
    b = nn.train_network(spec, x, hyper)
    assert all(p.dtype == np.float64 for p in a.model.params())
    # weights are float32 values widened, so a float32 file round trip is exact
    assert all(np.array_equal(p, p.astype(np.float32)) for p in a.model.params())
    assert all(np.array_equal(p, q) for p, q in zip(a.model.params(), b.model.params()))
    f64 = nn.train_network(spec, x, nn.TrainHyper(epochs=3, seed=2, batch_size=16))
    np.testing.assert_allclose(a.history, f64.history, rtol=1e-3)
    with pytest.raises(ValueError):
        nn.TrainHyper(precision="float16")


def test_augmentation_hook():
    x, y = linear_task(n=32)
    calls = []

    def flip_sign(batch, rng):
        calls.append(len(batch))
        return -batch

    spec = nn.NetSpec("vae", (4, 6), latent_dim=2)
    nn.train_network(spec, x, nn.TrainHyper(epochs=2, batch_size=16), augment=flip_sign)
    assert calls == [16, 16, 16, 16]
    with pytest.raises(ValueError):
        nn.train_network(nn.NetSpec("mlp", (4, 4)), x, nn.TrainHyper(epochs=1), targets=y, augment=flip_sign)
