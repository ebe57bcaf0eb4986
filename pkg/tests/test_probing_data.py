from collections import Counter

import numpy as np
import pytest
from scipy import stats

from ssan.data.pcfg import load_grammar, parse_grammar
from ssan.data.probing import (BIGRAM_SHIFT, DEPTH_CLASSES, OTHER, TOP_CONST, TREE_DEPTH, WRD,
                               SyntheticCorpusSpec, depth_quotas, draw_reorder, generate, reorder,
                               swap_adjacent, top_const_classes, top_const_label, undo_reorder)
from ssan.errors import ConfigError, FormatError, InputError
from ssan.trees import BinaryTree, parse_sexpr

SMALL = SyntheticCorpusSpec(n_train=300, n_dev=50, n_test=50, seed=3)

TINY_GRAMMAR = """
version 1
start S
S -> A B 1
lex A noun 1
lex B verb 1
"""


def recursive_depth(node):
    if node.is_leaf:
        return 1
    return 1 + max(recursive_depth(node.left), recursive_depth(node.right))


# ----------------------------------------------------------- bigram shift


def test_swap_example():
    a, b, c = 10, 11, 12
    assert swap_adjacent([a, b, c], 0) == [b, a, c]
    assert swap_adjacent([a, b, c], 1) == [a, c, b]


def test_swap_is_involution():
    rng = np.random.default_rng(0)
    for _ in range(200):
        toks = rng.integers(0, 50, size=int(rng.integers(2, 12))).tolist()
        k = int(rng.integers(len(toks) - 1))
        assert swap_adjacent(swap_adjacent(toks, k), k) == toks


def test_bigram_labels_and_edits():
    train = generate(BIGRAM_SHIFT, SMALL)["train"]
    for ex in train:
        if ex.label == 0:
            assert ex.tokens == ex.original
        else:
            diff = [k for k in range(len(ex.tokens)) if ex.tokens[k] != ex.original[k]]
            assert len(diff) == 2 and diff[1] == diff[0] + 1
            assert swap_adjacent(ex.tokens, diff[0]) == ex.original


def test_bigram_balance():
    spec = SyntheticCorpusSpec(n_train=10_000, n_dev=1, n_test=1, seed=1)
    train = generate(BIGRAM_SHIFT, spec)["train"]
    assert abs(np.mean([ex.label for ex in train]) - 0.5) <= 0.01


# ----------------------------------------------------------- word reorder


def test_reorder_example():
    a, b, c, d = 1, 2, 3, 4
    assert reorder([a, b, c, d], 0, 2) == [b, c, a, d]


def test_wrd_label_points_at_insert_and_origin():
    for ex in generate(WRD, SMALL)["train"]:
        insert, origin = ex.label
        assert insert != origin
        assert ex.tokens[insert] == ex.original[origin]
        assert undo_reorder(ex.tokens, insert, origin) == ex.original
        assert ex.tokens != ex.original


def test_draw_reorder_is_uniform():
    n, draws = 6, 100_000
    rng = np.random.default_rng(2)
    counts = Counter(draw_reorder(n, rng) for _ in range(draws))
    assert set(counts) == {(i, j) for i in range(n) for j in range(n) if i != j}
    assert stats.chisquare(list(counts.values())).pvalue > 1e-3
    for pos in range(n):
        share = sum(c for (i, _), c in counts.items() if i == pos) / draws
        assert abs(share - 1 / n) < 0.02


def test_undo_reorder_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(500):
        toks = rng.permutation(10).tolist()
        i, j = draw_reorder(10, rng)
        assert undo_reorder(reorder(toks, i, j), j, i) == toks


# -------------------------------------------------------------- pcfg tasks


def test_minimal_tree_depth():
    g = parse_grammar(TINY_GRAMMAR)
    tokens, tree = g.sample(np.random.default_rng(0), 2)
    assert len(tokens) == 2
    assert tree.depth() == 2
    assert tree.top_constituents() == "A B"


def test_depth_matches_recursive_oracle():
    g = load_grammar()
    rng = np.random.default_rng(4)
    seen = 0
    while seen < 10_000:
        try:
            _, tree = g.sample(rng, 200, 11, 20)
        except Exception:
            continue
        assert tree.depth() == recursive_depth(tree)
        seen += 1


def test_top_constituent_label():
    tree = parse_sexpr("(TOP (NP (DT 0) (NN 1)) (VP 2))")
    assert tree.top_constituents() == "NP VP"
    classes = ["S PU", "NP VP", OTHER]
    assert top_const_label(tree, classes) == 1
    assert top_const_label(parse_sexpr("(TOP (PP 0) (S 1))"), classes) == 2


def test_top_const_classes_rank_by_frequency():
    trees = [parse_sexpr(s) for s in ["(T (A 0) (B 1))"] * 3 + ["(T (C 0) (D 1))"] * 5]
    assert top_const_classes(trees) == ["C D", "A B", OTHER]


def test_depth_quotas_sum_and_shape():
    q = depth_quotas(1000, [0.069, 0.143, 0.163, 0.179, 0.174, 0.153, 0.119])
    assert sum(q) == 1000 and q[3] == 179


def test_tree_depth_task_labels_and_spans():
    splits = generate(TREE_DEPTH, SMALL)
    for ex in splits["train"]:
        assert ex.label in DEPTH_CLASSES
        assert ex.gold_tree.depth() == ex.label
        ex.gold_tree.validate(len(ex.tokens))
        assert SMALL.min_len <= len(ex.tokens) <= SMALL.max_len


def test_top_const_task_uses_train_classes():
    splits = generate(TOP_CONST, SMALL)
    classes = splits["train"].classes
    assert len(classes) <= 20 and classes[-1] == OTHER
    for split in splits.values():
        assert split.classes == classes
        for ex in split:
            assert ex.label == top_const_label(ex.gold_tree, classes)


def test_generation_is_deterministic():
    for task in (BIGRAM_SHIFT, WRD, TREE_DEPTH, TOP_CONST):
        a, b = generate(task, SMALL), generate(task, SMALL)
        assert all(a[s].examples == b[s].examples for s in a)


def test_seed_changes_data():
    other = SyntheticCorpusSpec(n_train=300, n_dev=50, n_test=50, seed=4)
    assert generate(WRD, SMALL)["train"].examples != generate(WRD, other)["train"].examples


def test_word_classes_cover_vocab():
    ds = generate(WRD, SMALL)["dev"]
    assert len(ds.word_classes) == SMALL.vocab_size and all(ds.word_classes)


# ------------------------------------------------------------------ errors


def test_unknown_task_and_bad_spec():
    with pytest.raises(ConfigError):
        generate("sentiment", SMALL)
    with pytest.raises(ConfigError):
        generate(WRD, SyntheticCorpusSpec(min_len=2))
    with pytest.raises(ConfigError):
        generate(BIGRAM_SHIFT, SyntheticCorpusSpec(positive_rate=1.5))


def test_grammar_validation():
    with pytest.raises(FormatError):
        parse_grammar("version 1\nstart S\nS -> A C 1\nlex A noun 1\n")
    with pytest.raises(FormatError):
        parse_grammar("version 1\nstart S\nS -> A A 1\nlex A colour 1\n")
    with pytest.raises(FormatError):
        parse_grammar("version 2\nstart S\nS -> A A 1\nlex A noun 1\n")
    with pytest.raises(FormatError, match="line 3"):
        parse_grammar("version 1\nstart S\nS => A A\n")


def test_shallow_grammar_cannot_reach_depth():
    with pytest.raises(InputError):
        generate(TREE_DEPTH, SyntheticCorpusSpec(min_len=3, n_train=5, n_dev=1, n_test=1),
                 parse_grammar(TINY_GRAMMAR))


def test_leaf_tree_helpers():
    leaf = BinaryTree.leaf(0, "NN")
    assert leaf.depth() == 1 and leaf.top_constituents() == "NN"
