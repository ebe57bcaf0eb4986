"""
Gumbel-Sigmoid selection in a few lines
=======================================

A selector scores every query-key pair with an energy and turns it into a
soft SELECT probability during training, or a hard 0/1 decision at inference.
"""

import numpy as np

from ssan.attention import AttentionConfig, ProjectionSet, multi_head_forward
from ssan.autodiff import Tensor
from ssan.selector import SelectorParams, gumbel_sigmoid, infer_hard, selection_energies

rng = np.random.default_rng(0)

# six tokens with 8 features each, and a random selector
h = Tensor(rng.normal(size=(6, 8)))
sel = SelectorParams(Tensor(rng.normal(size=(8, 8)) * 0.3), Tensor(rng.normal(size=(8, 8)) * 0.3))
energies = selection_energies(h, sel)
print("energies\n", np.round(energies.data, 2))

# lower temperatures push the relaxed samples toward 0 and 1
for tau in (2.0, 0.5, 0.05):
    a = gumbel_sigmoid(energies, tau, rng).sample.data
    print(f"tau={tau:<5} share of samples within 0.05 of 0 or 1: {(np.minimum(a, 1 - a) < 0.05).mean():.2f}")

# at inference the decision is simply energy >= 0
hard = infer_hard(energies)
print("hard gate\n", hard.sample.data.astype(int))
print("selection rate", hard.select_rate())

# the gate enters attention as log(gate) on the logits, so a 0 masks the key
proj = ProjectionSet(*(Tensor(rng.normal(size=(8, 8)) / np.sqrt(8)) for _ in range(4)))
_, plain = multi_head_forward(h, proj, AttentionConfig(8, 2))
_, gated = multi_head_forward(h, proj, AttentionConfig(8, 2), hard.sample)
print("head-0 weights without gate\n", np.round(plain.data[0], 2))
print("head-0 weights with gate\n", np.round(gated.data[0], 2))
