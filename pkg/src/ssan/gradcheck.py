"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward

FD_STEP = 1e-5
REL_TOL = 1e-4


def analytic_grads(fn: Callable[[], Tensor], leaves: Sequence[Tensor]) -> list[np.ndarray]:
    for t in leaves:
        t.grad = np.zeros_like(t.data)
    with Tape():
        loss = fn()
    backward(loss)
    return [t.grad.copy() for t in leaves]


def numeric_grads(fn: Callable[[], Tensor], leaves: Sequence[Tensor],
                  step: float = FD_STEP) -> list[np.ndarray]:
    out = []
    for t in leaves:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = fn().item()
            flat[k] = orig - step
            down = fn().item()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * step)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error; two (near) zero gradients count as agreeing."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[[], Tensor], leaves: Sequence[Tensor],
                    step: float = FD_STEP) -> list[float]:
    """Relative error between backprop and central differences for each leaf.

    ``fn`` must be a deterministic function of the leaves' current values;
    any noise it uses has to be drawn once, outside of ``fn``.
    """
    for t in leaves:
        t.data = np.array(t.data, dtype=np.float64, copy=True)
        t.requires_grad = True
    a = analytic_grads(fn, leaves)
    n = numeric_grads(fn, leaves, step)
    return [relative_error(x, y) for x, y in zip(a, n)]


# ------------------------------------------------------------------ suite


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    from . import autodiff as ad
    return ad.sum_all(ad.mul(out, w))


def op_cases(seed: int) -> list[tuple[str, Callable[[], Tensor], list[Tensor]]]:
    """One small random case per differentiable op, each reduced to a scalar.

    Inputs to ``relu`` avoid the kink and inputs to ``log``/``reciprocal``
    stay positive, where the central difference is well defined.
    """
    from . import autodiff as ad

    rng = np.random.default_rng([seed, 0x6AD])

    def leaf(*shape, low=None):
        x = rng.normal(size=shape)
        if low is not None:
            x = low + np.abs(x)
        return Tensor(x, requires_grad=True)

    def away_from_zero(*shape):
        x = rng.normal(size=shape)
        return Tensor(np.sign(x) * (0.1 + np.abs(x)), requires_grad=True)

    a, b = leaf(3, 4), leaf(3, 4)
    row = leaf(4)
    pos = leaf(3, 4, low=0.5)
    r = away_from_zero(3, 4)
    m1, m2 = leaf(2, 3, 4), leaf(4, 5)
    bm1, bm2 = leaf(2, 3, 4), leaf(2, 4, 3)
    table = leaf(6, 4)
    ids = rng.integers(0, 6, size=(2, 3))
    gain, bias = leaf(4), leaf(4)
    labels = rng.integers(0, 4, size=3)
    drop_seed = int(rng.integers(1 << 31))
    w34 = rng.normal(size=(3, 4))
    cases = [
        ("add", lambda: _weighted(ad.add(a, row), w34), [a, row]),
        ("sub", lambda: _weighted(ad.sub(a, b), w34), [a, b]),
        ("mul", lambda: _weighted(ad.mul(a, row), w34), [a, row]),
        ("reciprocal", lambda: _weighted(ad.reciprocal(pos), w34), [pos]),
        ("exp", lambda: _weighted(ad.exp(a), w34), [a]),
        ("log", lambda: _weighted(ad.log(pos), w34), [pos]),
        ("relu", lambda: _weighted(ad.relu(r), w34), [r]),
        ("sigmoid", lambda: _weighted(ad.sigmoid(a), w34), [a]),
        ("dropout", lambda: _weighted(ad.dropout(a, 0.3, np.random.default_rng(drop_seed)), w34), [a]),
        ("sum", lambda: _weighted(ad.sum(a, axis=0, keepdims=True), w34[:1]), [a]),
        ("mean", lambda: _weighted(ad.mean(a, axis=1), w34[:, 0]), [a]),
        ("reshape", lambda: _weighted(ad.reshape(a, (4, 3)), w34.reshape(4, 3)), [a]),
        ("transpose", lambda: _weighted(ad.swap_last(a), w34.T), [a]),
        ("matmul", lambda: _weighted(ad.matmul(m1, m2), rng_w((2, 3, 5), seed)), [m1, m2]),
        ("batched_matmul", lambda: _weighted(ad.matmul(bm1, bm2), rng_w((2, 3, 3), seed)), [bm1, bm2]),
        ("embedding", lambda: _weighted(ad.embedding(table, ids), rng_w((2, 3, 4), seed)), [table]),
        ("softmax", lambda: _weighted(ad.softmax_rows(a), w34), [a]),
        ("log_softmax", lambda: _weighted(ad.log_softmax_rows(a), w34), [a]),
        ("layer_norm", lambda: _weighted(ad.layer_norm(a, gain, bias), w34), [a, gain, bias]),
        ("cross_entropy", lambda: ad.cross_entropy(a, labels), [a]),
    ]
    return cases


def rng_w(shape, seed: int) -> np.ndarray:
    """Fixed projection weights for reducing an op output to a scalar."""
    return np.random.default_rng([seed, len(shape), 0x5EED]).normal(size=shape)


def ssan_layer_case(seed: int):
    """A tiny one-layer SSAN with a sentence head and frozen Gumbel noise."""
    from .model import ModelConfig, SSANModel

    model = SSANModel(ModelConfig(vocab_size=5, d_model=4, ffn_dim=6, n_heads=2, n_layers=1,
                                  selector_layer=1, n_classes=2, seed=seed))
    rng = np.random.default_rng([seed, 0x55A])
    tokens = rng.integers(0, 5, size=(2, 3))
    targets = rng.integers(0, 2, size=2)
    noise = {1: (rng.gumbel(size=(2, 3, 3)), rng.gumbel(size=(2, 3, 3)))}
    leaves = [t for _, t in model.params.items()]
    # zero biases at init put relu inputs exactly on the kink; move off it
    for t in leaves:
        t.data = t.data + 0.3 * rng.normal(size=t.shape)

    def fn():
        return model.loss(tokens, targets, train=True, tau=0.5, noise=noise)

    return "ssan_layer", fn, leaves


def gradient_suite(seed: int, tol: float = REL_TOL) -> list[tuple[str, float]]:
    """Worst relative error per case; a case passes when it is below ``tol``."""
    out = []
    for name, fn, leaves in op_cases(seed) + [ssan_layer_case(seed)]:
        out.append((name, max(check_gradients(fn, leaves))))
    return out
