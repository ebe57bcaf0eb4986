"""
Trees from attention
====================

A binary tree is built top-down by splitting each span where the attention
kept inside the two halves is largest.  A planted two-block matrix shows the
idea; a briefly trained probe shows the corpus-level bracket scores.
"""

import numpy as np

from ssan.data.probing import TREE_DEPTH, SyntheticCorpusSpec, generate
from ssan.model import SSANModel, TrainConfig, config_for, train
from ssan.trees import extract_corpus, span_scores, tree_from_attention

# tokens 0-1 attend among themselves, as do tokens 2-4
w = np.zeros((5, 5))
w[:2, :2] = 0.5
w[2:, 2:] = 1 / 3
print(np.round(span_scores(w), 3))
print("planted tree:", tree_from_attention(w))

# now the same procedure over a PCFG corpus with gold trees
splits = generate(TREE_DEPTH, SyntheticCorpusSpec(n_train=500, n_dev=100, n_test=100))
print("example gold tree:", splits["test"].examples[0].gold_tree)
for layer in (None, 1):
    model = SSANModel(config_for(splits["train"], d_model=32, ffn_dim=64, n_heads=4, n_layers=2,
                                 selector_layer=layer))
    train(model, splits["train"], None, TrainConfig(epochs=3, lr=2e-3))
    ext = extract_corpus(model, splits["test"], 1)
    print("SSAN" if layer else "SAN ", ext.metrics.format(), "first tree:", ext.trees[0])
