import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssan.errors import ContractError, FormatError, InputError
from ssan.trees import (BinaryTree, BracketMetrics, bracket_counts, bracket_eval, corpus_bracket_eval, extract_corpus,
                        parse_sexpr, span_scores, split_tree, tree_from_attention)

# (predicted, gold, matched, n_predicted, n_gold); bracket sets enumerated by hand
BRACKET_SUITE = [
    ("((0 1) 2)", "((0 1) 2)", 1, 1, 1),
    ("((0 1) 2)", "(0 (1 2))", 0, 1, 1),
    ("(0 (1 (2 3)))", "(((0 1) 2) 3)", 0, 2, 2),
    ("((0 1) (2 3))", "(((0 1) 2) 3)", 1, 2, 2),
    ("((0 1) (2 3))", "(0 (1 (2 3)))", 1, 2, 2),
    ("((0 (1 2)) 3)", "(((0 1) 2) 3)", 1, 2, 2),
    ("(0 ((1 2) 3))", "(0 (1 (2 3)))", 1, 2, 2),
    ("((0 (1 2)) 3)", "(0 ((1 2) 3))", 1, 2, 2),
    ("((0 1) (2 3))", "((0 (1 2)) 3)", 0, 2, 2),
    ("((0 1) (2 3))", "((0 1) (2 3))", 2, 2, 2),
    ("(0 1)", "(0 1)", 0, 0, 0),
    ("((0 1) ((2 3) 4))", "(((0 1) 2) (3 4))", 1, 3, 3),
    ("((0 1) ((2 3) 4))", "(0 (1 (2 (3 4))))", 1, 3, 3),
    ("(((0 1) 2) (3 4))", "(0 (1 (2 (3 4))))", 1, 3, 3),
    ("(0 (1 (2 (3 4))))", "((((0 1) 2) 3) 4)", 0, 3, 3),
    ("(((0 1) 2) (3 4))", "((((0 1) 2) 3) 4)", 2, 3, 3),
    ("((((0 1) 2) 3) 4)", "((((0 1) 2) 3) 4)", 3, 3, 3),
    ("((0 1) ((2 3) (4 5)))", "(((0 1) (2 3)) (4 5))", 3, 4, 4),
    ("((0 1) ((2 3) (4 5)))", "(0 (1 (2 (3 (4 5)))))", 2, 4, 4),
    ("(((0 1) (2 3)) (4 5))", "(0 (1 (2 (3 (4 5)))))", 1, 4, 4),
]


def all_trees(i, j):
    if i == j:
        yield BinaryTree.leaf(i)
        return
    for k in range(i, j):
        for left in all_trees(i, k):
            for right in all_trees(k + 1, j):
                yield BinaryTree.join(left, right)


def random_stochastic(rng, n):
    w = rng.random((n, n)) ** 3
    return w / w.sum(axis=1, keepdims=True)


def direct_scores(w):
    n = w.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        out[i, i] = 1.0
        for j in range(i + 1, n):
            prod = 1.0
            for p in range(i, j + 1):
                prod *= max(sum(w[p, q] for q in range(i, j + 1)), 1e-12)
            out[i, j] = prod ** (1.0 / (j - i + 1))
    return out


def block_matrix(n, cut, rng):
    w = np.zeros((n, n))
    for lo, hi in ((0, cut), (cut + 1, n - 1)):
        block = rng.random((hi - lo + 1, hi - lo + 1)) + 0.1
        w[lo:hi + 1, lo:hi + 1] = block / block.sum(axis=1, keepdims=True)
    return w


# --------------------------------------------------------------- s-exprs


def test_sexpr_round_trip():
    for text in ("(TOP (NP (DT 0) (NN 1)) (VP 2))", "((0 1) (2 3))", "4"):
        assert parse_sexpr(text).to_sexpr() == text


@pytest.mark.parametrize("bad", ["", "(0 1", "(0 1 2)", "((0 1) 3)", "(0 1))", "(x y)"])
def test_bad_sexpr(bad):
    with pytest.raises(FormatError):
        parse_sexpr(bad)


def test_join_requires_adjacent_children():
    with pytest.raises(ContractError):
        BinaryTree.join(BinaryTree.leaf(0), BinaryTree.leaf(2))


# ----------------------------------------------------------- span scores


def test_whole_sentence_span_scores_one():
    w = random_stochastic(np.random.default_rng(0), 6)
    assert span_scores(w)[0, 5] == pytest.approx(1.0, abs=1e-12)


def test_single_token_spans_score_one():
    s = span_scores(random_stochastic(np.random.default_rng(1), 5))
    np.testing.assert_array_equal(np.diag(s), np.ones(5))


def test_block_spans_score_one_and_straddles_less():
    w = block_matrix(5, 1, np.random.default_rng(2))
    s = span_scores(w)
    assert s[0, 1] == pytest.approx(1.0) and s[2, 4] == pytest.approx(1.0)
    for i in range(5):
        for j in range(i + 1, 5):
            if i <= 1 < j and (i, j) != (0, 4):
                assert s[i, j] < 1.0


def test_scores_match_direct_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        w = random_stochastic(rng, 5)
        np.testing.assert_allclose(np.triu(span_scores(w)), np.triu(direct_scores(w)), atol=1e-12, rtol=0)


def test_product_mode():
    w = random_stochastic(np.random.default_rng(4), 4)
    inside = w[1:3, 1:3].sum(axis=1)
    assert span_scores(w, "product")[1, 2] == pytest.approx(inside.prod(), rel=1e-12)
    with pytest.raises(ContractError):
        span_scores(w, "harmonic")


def test_non_stochastic_is_contract_error():
    with pytest.raises(ContractError):
        span_scores(np.full((3, 3), 0.5))
    with pytest.raises(ContractError):
        span_scores(np.ones((2, 3)) / 3)


def test_score_invariant_under_permutation_inside_span():
    rng = np.random.default_rng(5)
    w = random_stochastic(rng, 6)
    perm = np.arange(6)
    perm[1:4] = rng.permutation([1, 2, 3])
    wp = w[perm][:, perm]
    assert span_scores(wp)[1, 3] == pytest.approx(span_scores(w)[1, 3], rel=1e-12)


# ------------------------------------------------------------ split tree


def test_trivial_lengths():
    assert split_tree(np.ones((1, 1))).is_leaf
    t = tree_from_attention(random_stochastic(np.random.default_rng(6), 2))
    assert t.to_sexpr() == "(0 1)"


def test_planted_blocks_recovered():
    t = tree_from_attention(block_matrix(5, 1, np.random.default_rng(7)))
    assert t.left.span == (0, 1) and t.right.span == (2, 4)


def test_ties_pick_smallest_split():
    t = split_tree(np.ones((4, 4)))
    assert t.to_sexpr() == "(0 (1 (2 3)))"


def test_splits_attain_exhaustive_maximum():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(1, 11))
        s = span_scores(random_stochastic(rng, n))
        tree = split_tree(s)
        tree.validate(n)
        assert len(tree.internal_nodes()) == n - 1
        for node in tree.internal_nodes():
            i, j = node.span
            best = max(s[i, k] * s[k + 1, j] for k in range(i, j))
            assert s[i, node.left.end] * s[node.left.end + 1, j] == best


# --------------------------------------------------------------- metrics


@pytest.mark.parametrize("pred,gold,matched,n_pred,n_gold", BRACKET_SUITE)
def test_hand_enumerated_brackets(pred, gold, matched, n_pred, n_gold):
    p, g = parse_sexpr(pred), parse_sexpr(gold)
    assert bracket_counts(p, g) == (matched, n_pred, n_gold)
    m = bracket_eval(p, g)
    prec = Fraction(matched, n_pred) if n_pred else Fraction(0)
    rec = Fraction(matched, n_gold) if n_gold else Fraction(0)
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0)
    assert (m.precision, m.recall, m.f1) == pytest.approx((float(prec), float(rec), float(f1)), abs=1e-15)
    assert m.degenerate == (n_pred == 0)


def test_suite_has_both_extremes():
    f1s = [bracket_eval(parse_sexpr(p), parse_sexpr(g)).f1 for p, g, *_ in BRACKET_SUITE]
    assert len(BRACKET_SUITE) == 20 and 0.0 in f1s and 1.0 in f1s


def test_containment_gives_full_recall():
    m = BracketMetrics.from_counts(2, 3, 2)
    assert m.recall == 1.0 and m.precision < 1.0


def test_length_mismatch_is_input_error():
    with pytest.raises(InputError):
        bracket_eval(parse_sexpr("((0 1) 2)"), parse_sexpr("((0 1) (2 3))"))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_eval_symmetry(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    a = tree_from_attention(random_stochastic(rng, n))
    b = tree_from_attention(random_stochastic(rng, n))
    ab, ba = bracket_eval(a, b), bracket_eval(b, a)
    assert (ab.precision, ab.recall) == (ba.recall, ba.precision)


def test_f1_one_iff_equal_brackets():
    trees = list(all_trees(0, 4))
    for a, b in itertools.product(trees, repeat=2):
        assert (bracket_eval(a, b).f1 == 1.0) == (a.brackets() == b.brackets())


def test_micro_average_matches_summed_counts():
    rng = np.random.default_rng(9)
    pairs = []
    for _ in range(30):
        n = int(rng.integers(3, 9))
        pairs.append((tree_from_attention(random_stochastic(rng, n)),
                      tree_from_attention(random_stochastic(rng, n))))
    m = sum(bracket_counts(p, g)[0] for p, g in pairs)
    p = sum(bracket_counts(p, g)[1] for p, g in pairs)
    g = sum(bracket_counts(p, g)[2] for p, g in pairs)
    got = corpus_bracket_eval(pairs)
    assert (got.matched, got.predicted, got.gold) == (m, p, g)
    assert got.precision == m / p and got.recall == m / g


# ------------------------------------------------------------ extraction


class FixedModel:
    def __init__(self, heads=2):
        self.heads = heads

    def attention_maps(self, tokens):
        n = len(tokens)
        seed = sum(tokens) + 31 * n
        r = np.random.default_rng(seed)
        return [np.stack([random_stochastic(r, n) for _ in range(self.heads)])]


class Corpus:
    def __init__(self, examples):
        self.examples = examples


def test_extract_corpus_is_deterministic_and_checks_inputs():
    from ssan.data.probing import TREE_DEPTH, ProbingExample
    exs = [ProbingExample([1, 2, 3, 4], TREE_DEPTH, 5, parse_sexpr("((0 1) (2 3))")),
           ProbingExample([5, 6, 7], TREE_DEPTH, 5, parse_sexpr("(0 (1 2))"))]
    model = FixedModel()
    a = extract_corpus(model, Corpus(exs), 1)
    b = extract_corpus(model, Corpus(exs), 1)
    assert a.metrics == b.metrics and [t.to_sexpr() for t in a.trees] == [t.to_sexpr() for t in b.trees]
    with pytest.raises(InputError):
        extract_corpus(model, Corpus(exs), 2)
    with pytest.raises(InputError):
        extract_corpus(model, Corpus([ProbingExample([1, 2], TREE_DEPTH, 5)]), 1)


def test_two_token_corpus_is_degenerate():
    from ssan.data.probing import TREE_DEPTH, ProbingExample
    exs = [ProbingExample([1, 2], TREE_DEPTH, 5, parse_sexpr("(0 1)"))]
    assert extract_corpus(FixedModel(), Corpus(exs), 1).metrics.degenerate
