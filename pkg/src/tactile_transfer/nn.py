"""Dense networks with hand-written backpropagation, Adam and beta-VAEs.

Arrays are batch-major: an input batch has shape ``(batch, features)`` and a
layer computes ``act(x @ W.T + b)`` with ``W`` of shape ``(out, in)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .numerics import Prng, ShapeError, sample_gaussian

log = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "tanh")
PRECISIONS = {"float64": np.float64, "float32": np.float32}
SCHEDULES = ("constant", "cosine")


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class MlpModel:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an MLP needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer dims do not chain: {a.n_out} -> {b.n_in}")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.n_in,) + tuple(layer.n_out for layer in self.layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "MlpModel":
        return MlpModel([Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def astype(self, dtype) -> "MlpModel":
        return MlpModel([Layer(l.weights.astype(dtype), l.bias.astype(dtype), l.activation) for l in self.layers])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self, x)[-1]


@dataclass
class VaeModel:
    """Encoder trunk, mean and log-variance heads, and decoder.

    Every trunk layer is tanh so the linear heads see a nonlinear feature;
    the decoder ends in an identity layer.
    """

    encoder_trunk: MlpModel
    mu_head: MlpModel
    logvar_head: MlpModel
    decoder: MlpModel

    def __post_init__(self):
        lat = self.latent_dim
        if len(self.mu_head.layers) != 1 or len(self.logvar_head.layers) != 1:
            raise ShapeError("mean and log-variance heads must be single layers")
        if self.logvar_head.n_out != lat or self.decoder.n_in != lat:
            raise ShapeError("latent dimensions disagree between heads and decoder")
        if self.mu_head.n_in != self.encoder_trunk.n_out or self.logvar_head.n_in != self.encoder_trunk.n_out:
            raise ShapeError("heads do not match the trunk output")
        if self.decoder.n_out != self.encoder_trunk.n_in:
            raise ShapeError("decoder output must match encoder input")

    @property
    def latent_dim(self) -> int:
        return self.mu_head.n_out

    @property
    def n_in(self) -> int:
        return self.encoder_trunk.n_in

    def parts(self) -> tuple[MlpModel, MlpModel, MlpModel, MlpModel]:
        return self.encoder_trunk, self.mu_head, self.logvar_head, self.decoder

    def params(self) -> list[np.ndarray]:
        out = []
        for part in self.parts():
            out += part.params()
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "VaeModel":
        return VaeModel(*(p.copy() for p in self.parts()))

    def astype(self, dtype) -> "VaeModel":
        return VaeModel(*(p.astype(dtype) for p in self.parts()))

    def encode_mean(self, x: np.ndarray) -> np.ndarray:
        return vae_encode(self, x)[0]

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.decoder(z)


@dataclass(frozen=True)
class TrainHyper:
    beta: float = 1e-3
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    schedule: str = "constant"
    precision: str = "float64"

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {tuple(PRECISIONS)}, got {self.precision!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")

    def rate_at(self, epoch: int) -> float:
        """Learning rate for a zero-based epoch index.

        ``"cosine"`` anneals from ``learning_rate`` towards zero over ``epochs``
        following a half cosine; ``"constant"`` keeps it fixed.
        """
        if self.schedule == "constant" or self.epochs == 0:
            return self.learning_rate
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / self.epochs))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass(frozen=True)
class NetSpec:
    """Architecture request for :func:`train_network`.

    For ``kind="mlp"`` ``sizes`` is the full layer chain.  For ``kind="vae"``
    it is the encoder trunk chain (input first); the decoder mirrors it.
    """

    kind: str
    sizes: tuple[int, ...]
    latent_dim: int = 0

    def __post_init__(self):
        if self.kind not in ("vae", "mlp"):
            raise ValueError(f"unknown network kind {self.kind!r}")
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {self.sizes}")
        if self.kind == "vae" and self.latent_dim < 1:
            raise ValueError("a VAE needs latent_dim >= 1")


def _as_float(x) -> np.ndarray:
    x = np.asarray(x)
    return x if x.dtype == np.float32 else x.astype(np.float64, copy=False)


# -- construction -----------------------------------------------------------


def init_layer(rng: Prng, n_in: int, n_out: int, activation: str) -> Layer:
    limit = math.sqrt(6.0 / (n_in + n_out))
    w = rng.uniform_array(n_in * n_out, -limit, limit).reshape(n_out, n_in)
    return Layer(w, np.zeros(n_out), activation)


def init_mlp(rng: Prng, sizes: Sequence[int], hidden: str = "tanh", final: str = "identity") -> MlpModel:
    n = len(sizes) - 1
    return MlpModel([
        init_layer(rng, sizes[i], sizes[i + 1], final if i == n - 1 else hidden)
        for i in range(n)
    ])


def init_vae(rng: Prng, trunk_sizes: Sequence[int], latent_dim: int) -> VaeModel:
    trunk = init_mlp(rng, trunk_sizes, final="tanh")
    mu = init_mlp(rng, [trunk_sizes[-1], latent_dim])
    logvar = init_mlp(rng, [trunk_sizes[-1], latent_dim])
    decoder = init_mlp(rng, [latent_dim] + list(trunk_sizes[::-1]))
    return VaeModel(trunk, mu, logvar, decoder)


def build_model(spec: NetSpec, rng: Prng) -> MlpModel | VaeModel:
    if spec.kind == "mlp":
        return init_mlp(rng, spec.sizes)
    return init_vae(rng, spec.sizes, spec.latent_dim)


# -- forward / backward -----------------------------------------------------


def mlp_forward(model: MlpModel, x: np.ndarray) -> list[np.ndarray]:
    """Return ``[input, out_1, ..., out_L]`` (post-activation).

    float32 inputs stay float32 (for float32 models); anything else is
    computed in float64.
    """
    x = _as_float(x)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.n_in:
        raise ShapeError(f"input has {x.shape[1]} features, model expects {model.n_in}")
    acts = [x]
    for layer in model.layers:
        a = acts[-1] @ layer.weights.T + layer.bias
        if layer.activation == "tanh":
            a = np.tanh(a)
        acts.append(a)
    return acts


def mlp_backward(
    model: MlpModel, acts: list[np.ndarray], output_grad: np.ndarray, input_grad: bool = True
) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Reverse-mode pass.

    Returns the parameter gradients in :meth:`MlpModel.params` order and the
    gradient with respect to the input batch (``None`` when ``input_grad`` is
    false, which saves the widest product for a first layer).
    """
    if len(acts) != len(model.layers) + 1:
        raise ShapeError("activations do not belong to this model")
    g = _as_float(output_grad)
    if g.shape != acts[-1].shape:
        raise ShapeError(f"output gradient {g.shape} vs output {acts[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(model.layers))  # type: ignore[list-item]
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if layer.activation == "tanh":
            g = g * (1.0 - acts[i + 1] ** 2)
        grads[2 * i] = g.T @ acts[i]
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0 or input_grad:
            g = g @ layer.weights
    return grads, (g if input_grad else None)


def adam_step(
    state: AdamState,
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    hyper: TrainHyper,
    learning_rate: float | None = None,
) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place.

    Uses the folded form ``p -= lr * sqrt(c2) / c1 * m / (sqrt(v) + eps * sqrt(c2))``,
    algebraically equal to ``lr * m_hat / (sqrt(v_hat) + eps)``.  ``learning_rate``
    overrides ``hyper.learning_rate`` for scheduled training.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    state.step += 1
    b1, b2 = hyper.adam_beta1, hyper.adam_beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    lr = hyper.learning_rate if learning_rate is None else learning_rate
    step_size = lr * math.sqrt(c2) / c1
    eps = hyper.adam_eps * math.sqrt(c2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient {g.shape} vs parameter {p.shape}")
        tmp = np.multiply(g, 1.0 - b1)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp += eps
        np.divide(m, tmp, out=tmp)
        tmp *= step_size
        p -= tmp
    return state


# -- VAE --------------------------------------------------------------------


def vae_encode(
    vae: VaeModel, x: np.ndarray, rng: Prng | None = None, eps: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(mu, logvar, z)``.

    Without ``rng`` (and ``eps``) the code is deterministic and ``z = mu``.
    ``eps`` lets callers supply the standard-normal noise directly.
    """
    h = vae.encoder_trunk(x)
    mu = vae.mu_head(h)
    logvar = vae.logvar_head(h)
    if eps is None and rng is not None:
        eps = sample_gaussian(rng, mu.size).reshape(mu.shape)
    if eps is None:
        return mu, logvar, mu.copy()
    return mu, logvar, mu + np.exp(0.5 * logvar) * eps


def vae_loss(
    recon: np.ndarray, target: np.ndarray, mu: np.ndarray, logvar: np.ndarray, beta: float
) -> tuple[float, float, float]:
    recon = np.atleast_2d(recon)
    target = np.atleast_2d(target)
    if recon.shape != target.shape:
        raise ShapeError(f"reconstruction {recon.shape} vs target {target.shape}")
    mu = np.atleast_2d(mu)
    logvar = np.atleast_2d(logvar)
    recon_term = float(np.mean((recon - target) ** 2))
    kl_term = float(np.mean(np.sum(0.5 * (mu**2 + np.exp(logvar) - 1.0 - logvar), axis=1)))
    return recon_term + beta * kl_term, recon_term, kl_term


def vae_loss_and_grads(
    vae: VaeModel, x: np.ndarray, beta: float, eps: np.ndarray | None
) -> tuple[tuple[float, float, float], list[np.ndarray]]:
    """Loss of one batch and gradients in :meth:`VaeModel.params` order.

    ``eps`` is the reparameterisation noise; ``None`` trains on ``z = mu``.
    """
    x = np.atleast_2d(_as_float(x))
    batch = x.shape[0]
    trunk_acts = mlp_forward(vae.encoder_trunk, x)
    h = trunk_acts[-1]
    mu_acts = mlp_forward(vae.mu_head, h)
    lv_acts = mlp_forward(vae.logvar_head, h)
    mu, logvar = mu_acts[-1], lv_acts[-1]
    std = np.exp(0.5 * logvar)
    z = mu if eps is None else mu + std * eps
    dec_acts = mlp_forward(vae.decoder, z)
    recon = dec_acts[-1]
    losses = vae_loss(recon, x, mu, logvar, beta)

    d_recon = 2.0 * (recon - x) / recon.size
    dec_grads, d_z = mlp_backward(vae.decoder, dec_acts, d_recon)
    d_mu = d_z + beta * mu / batch
    d_lv = beta * 0.5 * (np.exp(logvar) - 1.0) / batch
    if eps is not None:
        d_lv = d_lv + d_z * eps * 0.5 * std
    mu_grads, d_h1 = mlp_backward(vae.mu_head, mu_acts, d_mu)
    lv_grads, d_h2 = mlp_backward(vae.logvar_head, lv_acts, d_lv)
    trunk_grads, _ = mlp_backward(vae.encoder_trunk, trunk_acts, d_h1 + d_h2, input_grad=False)
    return losses, trunk_grads + mu_grads + lv_grads + dec_grads


def mlp_loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    acts = mlp_forward(model, x)
    out = acts[-1]
    y = np.atleast_2d(y)
    if y.shape != out.shape:
        raise ShapeError(f"target {y.shape} vs output {out.shape}")
    loss = float(np.mean((out - y) ** 2))
    grads, _ = mlp_backward(model, acts, 2.0 * (out - y) / out.size, input_grad=False)
    return loss, grads


# -- training ---------------------------------------------------------------


@dataclass
class TrainResult:
    model: MlpModel | VaeModel
    history: list[float] = field(default_factory=list)


def train_network(
    spec: NetSpec,
    inputs: np.ndarray,
    hyper: TrainHyper,
    targets: np.ndarray | None = None,
    sample_latent: bool = True,
    augment: Callable[[np.ndarray, Prng], np.ndarray] | None = None,
) -> TrainResult:
    """Build a model from ``spec`` and fit it with minibatch Adam.

    A VAE reconstructs ``inputs``; an MLP regresses ``targets`` on ``inputs``
    with plain MSE.  The weight initialisation, per-epoch shuffles and the
    reparameterisation noise all come from one :class:`Prng` seeded with
    ``hyper.seed``.  ``history`` holds the sample-weighted mean training loss
    of every epoch.  With ``hyper.precision == "float32"`` the arithmetic runs
    in single precision and the returned weights are widened back to float64.
    ``augment``, if given, maps each VAE minibatch to a
    randomly transformed copy using the shared generator.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    n = x.shape[0]
    if n == 0 or x.size == 0:
        raise ValueError("empty dataset")
    if x.shape[1] != spec.sizes[0]:
        raise ShapeError(f"inputs have {x.shape[1]} features, spec expects {spec.sizes[0]}")
    if augment is not None and spec.kind != "vae":
        raise ValueError("batch augmentation applies to VAE training only")
    if spec.kind == "mlp":
        if targets is None:
            raise ValueError("an MLP needs regression targets")
        y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if y.shape != (n, spec.sizes[-1]):
            raise ShapeError(f"targets {y.shape}, expected {(n, spec.sizes[-1])}")

    dtype = PRECISIONS[hyper.precision]
    x = x.astype(dtype, copy=False)
    if spec.kind == "mlp":
        y = y.astype(dtype, copy=False)
    rng = Prng(hyper.seed)
    model = build_model(spec, rng).astype(dtype)
    params = model.params()
    state = AdamState.zeros_like(params)
    history: list[float] = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        lr = hyper.rate_at(epoch)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            if spec.kind == "vae":
                xb = x[idx] if augment is None else augment(x[idx], rng)
                eps = None
                if sample_latent:
                    eps = sample_gaussian(rng, len(idx) * spec.latent_dim).reshape(len(idx), -1).astype(dtype)
                (loss, _, _), grads = vae_loss_and_grads(model, xb, hyper.beta, eps)
            else:
                loss, grads = mlp_loss_and_grads(model, x[idx], y[idx])
            adam_step(state, params, grads, hyper, lr)
            total += loss * len(idx)
        history.append(total / n)
        if epoch % 10 == 0 or epoch == hyper.epochs - 1:
            log.debug("epoch %d/%d loss %.6g", epoch + 1, hyper.epochs, history[-1])
    return TrainResult(model.astype(np.float64), history)


def r2_score(pred: np.ndarray, target: np.ndarray) -> float:
    """Pooled coefficient of determination against per-feature means."""
    target = np.atleast_2d(target)
    pred = np.atleast_2d(pred)
    ss_res = float(np.sum((target - pred) ** 2))
    ss_tot = float(np.sum((target - target.mean(axis=0)) ** 2))
    return 1.0 - ss_res / ss_tot


def with_seed(hyper: TrainHyper, seed: int) -> TrainHyper:
    return replace(hyper, seed=seed)
