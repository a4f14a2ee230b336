"""Central finite-difference checks of the hand-written gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .numerics import Prng, sample_gaussian


@dataclass
class GradCheck:
    n_params: int
    max_rel_error: float
    n_failed: int

    @property
    def ok(self) -> bool:
        return self.n_failed == 0


def compare(
    loss_fn: Callable[[], float],
    params: list[np.ndarray],
    grads: list[np.ndarray],
    h: float = 1e-5,
    rel_tol: float = 1e-4,
    abs_tol: float = 1e-7,
) -> GradCheck:
    """Perturb every entry of ``params`` in place and compare with ``grads``.

    An entry passes when its relative error is within ``rel_tol`` or its
    absolute error is within ``abs_tol``.  ``max_rel_error`` is taken over
    entries whose gradient magnitude exceeds ``abs_tol``.
    """
    worst = 0.0
    failed = 0
    count = 0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            fd = (up - down) / (2.0 * h)
            err = abs(fd - gflat[i])
            rel = err / max(abs(fd), abs(gflat[i]), 1e-300)
            count += 1
            if max(abs(fd), abs(gflat[i])) > abs_tol:
                worst = max(worst, rel)
            if err > abs_tol and rel > rel_tol:
                failed += 1
    return GradCheck(count, worst, failed)


def random_mlp_case(rng: Prng, max_params: int = 1000) -> GradCheck:
    """MSE loss of a random tanh/identity MLP with at most 8 units per layer."""
    while True:
        depth = 1 + rng.randbelow(3)
        sizes = [2 + rng.randbelow(7) for _ in range(depth + 1)]
        acts = ["tanh" if rng.randbelow(2) else "identity" for _ in range(depth - 1)] + ["identity"]
        model = nn.MlpModel([nn.init_layer(rng, sizes[i], sizes[i + 1], acts[i]) for i in range(depth)])
        if model.n_params() <= max_params:
            break
    for layer in model.layers:
        layer.bias += 0.1 * sample_gaussian(rng, layer.n_out)
    batch = 3
    x = sample_gaussian(rng, batch * sizes[0]).reshape(batch, -1)
    y = sample_gaussian(rng, batch * sizes[-1]).reshape(batch, -1)
    _, grads = nn.mlp_loss_and_grads(model, x, y)

    def loss():
        return float(np.mean((model(x) - y) ** 2))

    return compare(loss, model.params(), grads)


def random_vae_case(rng: Prng, beta: float = 0.5, max_params: int = 1000) -> GradCheck:
    """Full beta-VAE loss (reconstruction + beta * KL) with fixed noise."""
    while True:
        n_in = 2 + rng.randbelow(5)
        hidden = [2 + rng.randbelow(5) for _ in range(1 + rng.randbelow(2))]
        latent = 1 + rng.randbelow(3)
        vae = nn.init_vae(rng, [n_in] + hidden, latent)
        if vae.n_params() <= max_params:
            break
    for part in vae.parts():
        for layer in part.layers:
            layer.bias += 0.1 * sample_gaussian(rng, layer.n_out)
    batch = 4
    x = sample_gaussian(rng, batch * n_in).reshape(batch, -1)
    eps = sample_gaussian(rng, batch * latent).reshape(batch, -1)
    _, grads = nn.vae_loss_and_grads(vae, x, beta, eps)

    def loss():
        mu, logvar, z = nn.vae_encode(vae, x, eps=eps)
        return nn.vae_loss(vae.decode(z), x, mu, logvar, beta)[0]

    return compare(loss, vae.params(), grads)


def gradient_suite(seed: int = 0, n_networks: int = 20) -> list[GradCheck]:
    """Alternate MLP and VAE cases; half of the suite checks the VAE loss."""
    rng = Prng(seed)
    return [random_vae_case(rng) if i % 2 else random_mlp_case(rng) for i in range(n_networks)]
