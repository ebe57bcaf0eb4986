"""
SAN versus SSAN on word reordering detection
============================================

Trains a plain self-attention probe and one with the selector on layer 1,
then prints Insert / Original / Both accuracies with the relative change.
Sizes are kept small so the script finishes in about a minute.
"""

from ssan.cli import _render, probe_table
from ssan.data.probing import WRD, SyntheticCorpusSpec, generate
from ssan.model import SSANModel, TrainConfig, config_for, evaluate, train

splits = generate(WRD, SyntheticCorpusSpec(n_train=2000, n_dev=300, n_test=300, seed=1))
print("mean |I - O| distance:", round(splits["train"].meta["mean_distance"], 2))

dims = dict(d_model=32, ffn_dim=128, n_heads=4, n_layers=2)
results = {}
for layer in (None, 1):
    model = SSANModel(config_for(splits["train"], **dims, selector_layer=layer))
    res = train(model, splits["train"], splits["dev"], TrainConfig(epochs=6, lr=2e-3))
    model.params.load_state_dict(res.best_state)
    results[layer] = evaluate(model, splits["test"])
    print(f"selector layer {layer}: best dev epoch {res.best_epoch}")

header, rows = probe_table(WRD, results[None], [(1, results[1])])
print(_render(header, rows))
