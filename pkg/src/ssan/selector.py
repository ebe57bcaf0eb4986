"""Selector network: SELECT/DISCARD decisions for every query/key pair.

Energies are a bilinear score of the input layer, selection probabilities
are their sigmoid.  Training draws a relaxed sample with Gumbel-Sigmoid,
inference keeps every pair whose probability is at least one half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError

UNIFORM_CLAMP = 1e-12

TRAIN = "train"
INFER = "infer"


@dataclass
class GateMatrix:
    """Selection probabilities ``probs`` and the (soft or hard) ``sample``."""

    probs: np.ndarray
    sample: Tensor
    mode: str
    tau: float | None = None

    @property
    def shape(self):
        return self.sample.shape

    def select_rate(self) -> float:
        return float(self.sample.data.mean())


@dataclass
class SelectorParams:
    w_qs: Tensor
    w_ks: Tensor


def selection_energies(h: Tensor, params: SelectorParams, scaled: bool = False) -> Tensor:
    """Pairwise energies ``(H W_qs)(H W_ks)^T``, shape (..., N, N)."""
    h = ad.as_tensor(h)
    d = h.shape[-1]
    for w in (params.w_qs, params.w_ks):
        if w.shape[0] != d:
            raise DimensionError(f"selector weight {w.shape} cannot project width {d}")
    qs = ad.matmul(h, params.w_qs)
    ks = ad.matmul(h, params.w_ks)
    e = ad.matmul(qs, ad.swap_last(ks))
    if scaled:
        e = ad.mul(e, 1.0 / np.sqrt(params.w_qs.shape[1]))
    return e


def gumbel_noise(shape, rng: np.random.Generator) -> Tensor:
    u = np.clip(rng.random(shape), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    return Tensor(-np.log(-np.log(u)))


def gumbel_sigmoid(energies: Tensor, tau: float, rng: np.random.Generator | None = None,
                   noise: tuple | None = None) -> GateMatrix:
    """Relaxed Bernoulli sample ``sigmoid((E + G' - G'') / tau)``.

    ``noise`` pins ``(G', G'')`` for gradient checks; otherwise both are drawn
    fresh from ``rng``.  Gradients flow through ``energies`` only.
    """
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    energies = ad.as_tensor(energies)
    if noise is None:
        if rng is None:
            raise ConfigError("gumbel_sigmoid needs an rng or frozen noise")
        g1 = gumbel_noise(energies.shape, rng)
        g2 = gumbel_noise(energies.shape, rng)
    else:
        g1, g2 = (ad.as_tensor(n) for n in noise)
    logits = ad.mul(ad.add(energies, g1.data - g2.data), 1.0 / tau)
    sample = ad.sigmoid(logits)
    return GateMatrix(probs=ad.sigmoid_np(energies.data), sample=sample, mode=TRAIN, tau=tau)


def infer_hard(energies) -> GateMatrix:
    """Most probable action per pair; a probability of exactly 0.5 selects."""
    e = ad.as_tensor(energies).data
    return GateMatrix(probs=ad.sigmoid_np(e), sample=Tensor((e >= 0.0).astype(np.float64)),
                      mode=INFER)


def temperature(step: int, total_steps: int, tau: float, tau_final: float | None = None) -> float:
    """Constant ``tau``, or linear annealing towards ``tau_final`` over training."""
    if tau_final is None or total_steps <= 1:
        return tau
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return tau + (tau_final - tau) * frac
