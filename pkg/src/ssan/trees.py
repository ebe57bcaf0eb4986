"""Binary constituency trees, attention span scores and bracket scoring.

A tree is induced from an attention matrix top-down: every span is split at
the position whose two halves keep the most attention inside themselves.
Trees are compared with unlabeled EVALB-style brackets, ignoring
single-token spans and the span covering the whole sentence.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import ContractError, FormatError, InputError

MASS_FLOOR = 1e-12
STOCHASTIC_TOL = 1e-6


@dataclass
class BinaryTree:
    """Node covering tokens ``start..end`` (inclusive)."""

    start: int
    end: int
    tag: str | None = None
    left: "BinaryTree | None" = None
    right: "BinaryTree | None" = None

    @classmethod
    def leaf(cls, i: int, tag: str | None = None) -> "BinaryTree":
        return cls(i, i, tag)

    @classmethod
    def join(cls, left: "BinaryTree", right: "BinaryTree", tag: str | None = None) -> "BinaryTree":
        if left.end + 1 != right.start:
            raise ContractError(f"children ({left.start},{left.end}) and ({right.start},{right.end}) are not adjacent")
        return cls(left.start, right.end, tag, left, right)

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end

    def __len__(self) -> int:
        return self.end - self.start + 1

    def nodes(self) -> Iterator["BinaryTree"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def spans(self) -> list[tuple[int, int]]:
        return [n.span for n in self.nodes()]

    def internal_nodes(self) -> list["BinaryTree"]:
        return [n for n in self.nodes() if not n.is_leaf]

    def depth(self) -> int:
        """Longest root-to-word path; a preterminal leaf counts one edge to its word."""
        if self.is_leaf:
            return 1
        return 1 + max(self.left.depth(), self.right.depth())

    def top_constituents(self) -> str:
        if self.is_leaf:
            return self.tag or ""
        return f"{self.left.tag} {self.right.tag}"

    def brackets(self) -> Counter:
        """Unlabeled non-trivial brackets: no single tokens, no whole-sentence span."""
        return Counter(n.span for n in self.nodes()
                       if n.end > n.start and n.span != self.span)

    def validate(self, n_tokens: int | None = None) -> None:
        if n_tokens is not None and self.span != (0, n_tokens - 1):
            raise ContractError(f"tree covers {self.span}, expected (0, {n_tokens - 1})")
        for node in self.nodes():
            if node.is_leaf:
                if node.start != node.end or node.right is not None:
                    raise ContractError(f"leaf spans {node.span}")
            elif (node.right is None or node.left.start != node.start
                  or node.right.end != node.end or node.left.end + 1 != node.right.start):
                raise ContractError(f"node {node.span} is not partitioned by its children")

    def to_sexpr(self) -> str:
        if self.is_leaf:
            return f"({self.tag} {self.start})" if self.tag else str(self.start)
        inner = f"{self.left.to_sexpr()} {self.right.to_sexpr()}"
        return f"({self.tag} {inner})" if self.tag else f"({inner})"

    def __str__(self) -> str:
        return self.to_sexpr()


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_sexpr(text: str) -> BinaryTree:
    """Inverse of :meth:`BinaryTree.to_sexpr`."""
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise FormatError("empty tree")
    pos = 0

    def node() -> BinaryTree:
        nonlocal pos
        if pos >= len(tokens):
            raise FormatError(f"unexpected end of tree: {text!r}")
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise FormatError(f"unexpected ')' in {text!r}")
        if tok != "(":
            if not tok.isdigit():
                raise FormatError(f"bare leaf must be a token index, got {tok!r}")
            return BinaryTree.leaf(int(tok))
        tag = None
        if pos < len(tokens) and tokens[pos] not in "()" and not tokens[pos].isdigit():
            tag = tokens[pos]
            pos += 1
        children = []
        while pos < len(tokens) and tokens[pos] != ")":
            children.append(node())
        if pos >= len(tokens):
            raise FormatError(f"unbalanced parentheses in {text!r}")
        pos += 1
        if len(children) == 1 and children[0].is_leaf and children[0].tag is None and tag is not None:
            return BinaryTree.leaf(children[0].start, tag)
        if len(children) != 2:
            raise FormatError(f"expected a binary node, got {len(children)} children in {text!r}")
        try:
            return BinaryTree.join(children[0], children[1], tag)
        except ContractError as exc:
            raise FormatError(str(exc)) from exc

    tree = node()
    if pos != len(tokens):
        raise FormatError(f"trailing input after tree: {text!r}")
    return tree


# ------------------------------------------------------------- span scores


def _check_stochastic(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
        raise ContractError(f"attention must be a non-empty square matrix, got shape {w.shape}")
    if np.any(w < -STOCHASTIC_TOL) or np.any(np.abs(w.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
        raise ContractError("attention rows must be non-negative and sum to 1")
    return w


def span_scores(weights, mode: str = "geometric") -> np.ndarray:
    """Table ``score[i, j]`` (i <= j) of attention kept inside span i..j.

    For each row p in the span, the inside mass is the attention p puts on
    columns i..j.  ``geometric`` takes the length-normalized geometric mean of
    those masses, ``product`` their plain product.  Single tokens score 1;
    entries below the diagonal are 0.
    """
    if mode not in ("geometric", "product"):
        raise ContractError(f"unknown span score mode {mode!r}")
    w = _check_stochastic(weights)
    n = w.shape[0]
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(w, axis=1)], axis=1)
    scores = np.zeros((n, n))
    for i in range(n):
        scores[i, i] = 1.0
        for j in range(i + 1, n):
            inside = np.maximum(cum[i:j + 1, j + 1] - cum[i:j + 1, i], MASS_FLOOR)
            logs = np.log(inside)
            scores[i, j] = np.exp(logs.mean() if mode == "geometric" else logs.sum())
    return scores


def best_split(scores: np.ndarray, i: int, j: int) -> int:
    """Smallest k in [i, j) maximizing score(i, k) * score(k+1, j)."""
    values = scores[i, i:j] * scores[np.arange(i + 1, j + 1), j]
    return i + int(np.argmax(values))


def split_tree(scores: np.ndarray) -> BinaryTree:
    n = scores.shape[0]
    if n < 1:
        raise ContractError("cannot build a tree over zero tokens")

    def build(i: int, j: int) -> BinaryTree:
        if i == j:
            return BinaryTree.leaf(i)
        k = best_split(scores, i, j)
        return BinaryTree.join(build(i, k), build(k + 1, j))

    return build(0, n - 1)


def tree_from_attention(weights, mode: str = "geometric") -> BinaryTree:
    return split_tree(span_scores(weights, mode))


# ------------------------------------------------------------------ metrics


@dataclass
class BracketMetrics:
    precision: float
    recall: float
    f1: float
    matched: int = 0
    predicted: int = 0
    gold: int = 0
    degenerate: bool = False

    @classmethod
    def from_counts(cls, matched: int, predicted: int, gold: int) -> "BracketMetrics":
        degenerate = predicted == 0 or gold == 0
        p = matched / predicted if predicted else 0.0
        r = matched / gold if gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f1, matched, predicted, gold, degenerate)

    def format(self) -> str:
        return f"precision={self.precision:.6f} recall={self.recall:.6f} f1={self.f1:.6f}"


def bracket_counts(predicted: BinaryTree, gold: BinaryTree) -> tuple[int, int, int]:
    if len(predicted) != len(gold) or predicted.start != gold.start:
        raise InputError(f"sentence length mismatch: predicted covers {predicted.span}, gold {gold.span}")
    pb, gb = predicted.brackets(), gold.brackets()
    matched = sum(min(c, gb[b]) for b, c in pb.items())
    return matched, sum(pb.values()), sum(gb.values())


def bracket_eval(predicted: BinaryTree, gold: BinaryTree) -> BracketMetrics:
    return BracketMetrics.from_counts(*bracket_counts(predicted, gold))


def corpus_bracket_eval(pairs: Iterable[tuple[BinaryTree, BinaryTree]]) -> BracketMetrics:
    """Micro-average: metrics from match/predicted/gold counts summed over sentences."""
    m = p = g = 0
    for pred, gold in pairs:
        a, b, c = bracket_counts(pred, gold)
        m, p, g = m + a, p + b, g + c
    return BracketMetrics.from_counts(m, p, g)


@dataclass
class Extraction:
    trees: list[BinaryTree] = field(default_factory=list)
    metrics: BracketMetrics | None = None


def extract_corpus(model, dataset, layer: int, mode: str = "geometric") -> Extraction:
    """Induce a tree per sentence from head-averaged attention at ``layer``.

    ``model`` must provide ``attention_maps(tokens) -> list of (heads, N, N)``
    arrays computed in inference mode.
    """
    examples = [ex for ex in dataset.examples if ex.gold_tree is not None]
    if not examples:
        raise InputError("dataset carries no gold trees")
    trees, pairs = [], []
    for ex in examples:
        maps = model.attention_maps(ex.tokens)
        if not 1 <= layer <= len(maps):
            raise InputError(f"layer {layer} out of range 1..{len(maps)}")
        weights = np.asarray(maps[layer - 1]).mean(axis=0)
        tree = tree_from_attention(weights, mode)
        trees.append(tree)
        pairs.append((tree, ex.gold_tree))
    return Extraction(trees, corpus_bracket_eval(pairs))
