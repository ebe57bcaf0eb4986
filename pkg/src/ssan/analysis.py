"""Attention-behavior statistics over a dataset.

All statistics use inference-mode attention averaged over heads (or one
chosen head) at a single layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.pcfg import CONTENT_CLASSES, FUNCTION_CLASSES, WORD_CLASSES
from .errors import InputError

DISTANCE_BUCKETS = ("0", "1", "2", "3-5", ">5")


def distance_bucket(dist: np.ndarray) -> np.ndarray:
    """Bucket index for |query - key| distances: 0, 1, 2, 3-5, >5."""
    return np.select([dist <= 2, dist <= 5], [dist, 3], default=4)


@dataclass
class DistanceHistogram:
    buckets: tuple[str, ...]
    mass: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.buckets, self.mass.tolist()))


@dataclass
class WordClassAttention:
    per_class: dict[str, float]

    @property
    def content(self) -> float:
        return float(sum(self.per_class[c] for c in CONTENT_CLASSES))

    @property
    def content_free(self) -> float:
        return float(sum(self.per_class[c] for c in FUNCTION_CLASSES))

    def as_dict(self) -> dict[str, float]:
        out = dict(self.per_class)
        out["content_total"] = self.content
        out["content_free_total"] = self.content_free
        return out


def _layer_map(model, tokens, layer: int, head: int | None) -> np.ndarray:
    maps = model.attention_maps(tokens)
    if not 1 <= layer <= len(maps):
        raise InputError(f"layer {layer} out of range 1..{len(maps)}")
    w = maps[layer - 1]
    if head is None:
        return w.mean(axis=0)
    if not 0 <= head < w.shape[0]:
        raise InputError(f"head {head} out of range 0..{w.shape[0] - 1}")
    return w[head]


def histogram_from_maps(maps) -> DistanceHistogram:
    """Mean per-query attention mass in each distance bucket."""
    total = np.zeros(len(DISTANCE_BUCKETS))
    queries = 0
    for w in maps:
        w = np.asarray(w, dtype=np.float64)
        n = w.shape[0]
        idx = np.arange(n)
        buckets = distance_bucket(np.abs(idx[:, None] - idx[None, :]))
        total += np.bincount(buckets.ravel(), weights=w.ravel(), minlength=len(DISTANCE_BUCKETS))
        queries += n
    if not queries:
        raise InputError("no attention maps to summarize")
    return DistanceHistogram(DISTANCE_BUCKETS, total / queries)


def distance_histogram(model, dataset, layer: int, head: int | None = None) -> DistanceHistogram:
    if model is None:
        raise InputError("distance histogram needs a trained checkpoint")
    return histogram_from_maps(_layer_map(model, ex.tokens, layer, head) for ex in dataset.examples)


def _check_classes(dataset) -> list[str]:
    classes = list(dataset.word_classes)
    if len(classes) != dataset.vocab_size or any(c not in WORD_CLASSES for c in classes):
        raise InputError("dataset lexicon carries no word-class tags")
    return classes


def word_class_from_maps(maps, token_lists, word_classes) -> WordClassAttention:
    """Received attention per key class; each sentence contributes a unit of mass."""
    totals = dict.fromkeys(WORD_CLASSES, 0.0)
    n_sent = 0
    for w, tokens in zip(maps, token_lists):
        w = np.asarray(w, dtype=np.float64)
        received = w.sum(axis=0) / w.shape[0]
        for tok, mass in zip(tokens, received):
            totals[word_classes[tok]] += mass
        n_sent += 1
    if not n_sent:
        raise InputError("no sentences to summarize")
    return WordClassAttention({c: v / n_sent for c, v in totals.items()})


def word_class_attention(model, dataset, layer: int, head: int | None = None) -> WordClassAttention:
    classes = _check_classes(dataset)
    maps = [_layer_map(model, ex.tokens, layer, head) for ex in dataset.examples]
    return word_class_from_maps(maps, [ex.tokens for ex in dataset.examples], classes)


@dataclass
class SelectionRate:
    overall: float
    per_class: dict[str, float]


def selection_rate(model, dataset) -> SelectionRate:
    """Fraction of SELECT decisions at inference, overall and by key-token class."""
    layer = model.config.selector_layer
    if layer is None:
        raise InputError("model has no selector layer")
    classes = _check_classes(dataset)
    selected = dict.fromkeys(WORD_CLASSES, 0.0)
    seen = dict.fromkeys(WORD_CLASSES, 0)
    ones = total = 0.0
    for ex in dataset.examples:
        gate = model.gate_maps(ex.tokens)[layer - 1]
        ones += gate.sum()
        total += gate.size
        for j, tok in enumerate(ex.tokens):
            selected[classes[tok]] += gate[:, j].sum()
            seen[classes[tok]] += gate.shape[0]
    if not total:
        raise InputError("dataset is empty")
    return SelectionRate(ones / total, {c: selected[c] / seen[c] for c in WORD_CLASSES if seen[c]})
