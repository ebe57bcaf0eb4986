"""Generators for the four probing tasks over a PCFG source corpus.

* ``bigram-shift``: half of the sentences get one adjacent pair swapped.
* ``wrd``: a word is popped from position i and re-inserted at j != i; the
  model must find the insert position (I) and the origin position (O).
* ``tree-depth``: classify by depth of the gold tree (classes 5..11).
* ``top-const``: classify by the labels directly under the root (19 most
  frequent sequences plus ``OTHER``).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, InputError
from ..trees import BinaryTree
from .pcfg import PcfgGrammar, TooLarge, load_grammar

BIGRAM_SHIFT = "bigram-shift"
WRD = "wrd"
TREE_DEPTH = "tree-depth"
TOP_CONST = "top-const"
TASKS = (BIGRAM_SHIFT, WRD, TREE_DEPTH, TOP_CONST)

MIN_DEPTH, MAX_DEPTH = 5, 11
DEPTH_CLASSES = tuple(range(MIN_DEPTH, MAX_DEPTH + 1))
# Class shares of depths 5..11 in the reference TreeDepth data.
DEPTH_RATIOS = (0.069, 0.143, 0.163, 0.179, 0.174, 0.153, 0.119)
N_TOP_CLASSES = 20
OTHER = "OTHER"
SPLITS = ("train", "dev", "test")
MAX_TRIES_PER_SENTENCE = 500


@dataclass
class ProbingExample:
    tokens: list[int]
    task: str
    # 0/1, (insert_pos, origin_pos), depth, or top-constituent class index
    label: int | tuple[int, int]
    gold_tree: BinaryTree | None = None
    # source sentence before perturbation; kept in memory only
    original: list[int] | None = field(default=None, compare=False)

    def __eq__(self, other):
        if not isinstance(other, ProbingExample):
            return NotImplemented
        return (self.tokens == other.tokens and self.task == other.task
                and self.label == other.label
                and (None if self.gold_tree is None else self.gold_tree.to_sexpr())
                == (None if other.gold_tree is None else other.gold_tree.to_sexpr()))


@dataclass
class Dataset:
    task: str
    examples: list[ProbingExample]
    vocab_size: int
    seed: int
    classes: list[str] = field(default_factory=list)
    word_classes: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def max_len(self) -> int:
        return max((len(ex.tokens) for ex in self.examples), default=0)


@dataclass
class SyntheticCorpusSpec:
    vocab_size: int = 200
    min_len: int = 8
    max_len: int = 20
    n_train: int = 10000
    n_dev: int = 1000
    n_test: int = 1000
    seed: int = 0
    positive_rate: float = 0.5
    depth_ratios: tuple[float, ...] | None = DEPTH_RATIOS

    def validate(self, task: str) -> None:
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
        if self.min_len < 3:
            raise ConfigError("sentences need at least 3 tokens")
        if self.max_len < self.min_len:
            raise ConfigError("max_len < min_len")
        if not 0.0 <= self.positive_rate <= 1.0:
            raise ConfigError("positive_rate must lie in [0, 1]")
        if self.depth_ratios is not None and len(self.depth_ratios) != len(DEPTH_CLASSES):
            raise ConfigError(f"depth_ratios needs {len(DEPTH_CLASSES)} entries")

    def sizes(self) -> dict[str, int]:
        return {"train": self.n_train, "dev": self.n_dev, "test": self.n_test}


def split_rng(seed: int, split: str) -> np.random.Generator:
    return np.random.default_rng([seed, SPLITS.index(split)])


# ---------------------------------------------------------------- sentences


def sample_sentence(grammar: PcfgGrammar, spec: SyntheticCorpusSpec,
                    rng: np.random.Generator, depth: int | None = None,
                    ) -> tuple[list[int], BinaryTree]:
    """Rejection-sample a tree with length and depth inside the corpus bounds."""
    for _ in range(MAX_TRIES_PER_SENTENCE if depth is None else 50 * MAX_TRIES_PER_SENTENCE):
        try:
            tokens, tree = grammar.sample(rng, spec.vocab_size, MAX_DEPTH, spec.max_len)
        except TooLarge:
            continue
        if len(tokens) < spec.min_len:
            continue
        d = tree.depth()
        if d < MIN_DEPTH or (depth is not None and d != depth):
            continue
        return tokens, tree
    want = f"depth {depth}" if depth is not None else f"depth {MIN_DEPTH}..{MAX_DEPTH}"
    raise InputError(f"grammar failed to produce a sentence with {want} and length "
                     f"{spec.min_len}..{spec.max_len} within the retry budget")


# ---------------------------------------------------------------- bigram shift


def swap_adjacent(tokens: list[int], n: int) -> list[int]:
    out = list(tokens)
    out[n], out[n + 1] = out[n + 1], out[n]
    return out


def _bigram_split(grammar, spec, n, rng) -> list[ProbingExample]:
    n_pos = int(round(n * spec.positive_rate))
    flags = np.zeros(n, dtype=bool)
    flags[:n_pos] = True
    rng.shuffle(flags)
    out = []
    for positive in flags:
        tokens, tree = sample_sentence(grammar, spec, rng)
        if not positive:
            out.append(ProbingExample(tokens, BIGRAM_SHIFT, 0, tree, original=tokens))
            continue
        candidates = [k for k in range(len(tokens) - 1) if tokens[k] != tokens[k + 1]]
        while not candidates:
            tokens, tree = sample_sentence(grammar, spec, rng)
            candidates = [k for k in range(len(tokens) - 1) if tokens[k] != tokens[k + 1]]
        # identical-token swaps would leave the sentence unchanged: redraw
        k = candidates[rng.integers(len(candidates))]
        out.append(ProbingExample(swap_adjacent(tokens, k), BIGRAM_SHIFT, 1, None, original=tokens))
    return out


# ---------------------------------------------------------------- word reorder


def reorder(tokens: list[int], i: int, j: int) -> list[int]:
    """Pop ``tokens[i]`` and insert it so that it lands at index ``j``."""
    out = list(tokens)
    word = out.pop(i)
    out.insert(j, word)
    return out


def undo_reorder(tokens: list[int], insert_pos: int, origin_pos: int) -> list[int]:
    return reorder(tokens, insert_pos, origin_pos)


def draw_reorder(n: int, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform over ordered pairs (i, j), i != j, both in [0, n)."""
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    return i, j + (j >= i)


def _wrd_split(grammar, spec, n, rng) -> list[ProbingExample]:
    out = []
    for _ in range(n):
        tokens, _tree = sample_sentence(grammar, spec, rng)
        while len(set(tokens)) == 1:
            tokens, _tree = sample_sentence(grammar, spec, rng)
        while True:
            i, j = draw_reorder(len(tokens), rng)
            edited = reorder(tokens, i, j)
            if edited != tokens:
                break
        # I = where the word now sits, O = where it was popped from
        out.append(ProbingExample(edited, WRD, (j, i), None, original=tokens))
    return out


# ---------------------------------------------------------------- PCFG classes


def depth_quotas(n: int, ratios) -> list[int]:
    ratios = np.asarray(ratios, dtype=np.float64)
    exact = ratios / ratios.sum() * n
    counts = np.floor(exact).astype(int)
    order = np.argsort(-(exact - counts), kind="stable")
    for k in range(n - counts.sum()):
        counts[order[k]] += 1
    return counts.tolist()


def _tree_depth_split(grammar, spec, n, rng) -> list[ProbingExample]:
    if spec.depth_ratios is None:
        out = []
        for _ in range(n):
            tokens, tree = sample_sentence(grammar, spec, rng)
            out.append(ProbingExample(tokens, TREE_DEPTH, tree.depth(), tree, original=tokens))
        return out
    quotas = dict(zip(DEPTH_CLASSES, depth_quotas(n, spec.depth_ratios)))
    # draw a class order first so every split interleaves depths
    order = np.repeat(np.array(DEPTH_CLASSES), [quotas[d] for d in DEPTH_CLASSES])
    rng.shuffle(order)
    pool: dict[int, list] = {d: [] for d in DEPTH_CLASSES}
    out = []
    for depth in order:
        depth = int(depth)
        budget = 50 * MAX_TRIES_PER_SENTENCE
        while not pool[depth]:
            budget -= 1
            if budget < 0:
                raise InputError(f"grammar cannot reach depth {depth} within the retry budget")
            tokens, tree = sample_sentence(grammar, spec, rng)
            d = tree.depth()
            if len(pool[d]) < quotas[d]:
                pool[d].append((tokens, tree))
        tokens, tree = pool[depth].pop(0)
        quotas[depth] -= 1
        out.append(ProbingExample(tokens, TREE_DEPTH, depth, tree, original=tokens))
    return out


def top_const_classes(trees: list[BinaryTree]) -> list[str]:
    counts = Counter(t.top_constituents() for t in trees)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [name for name, _ in ranked[:N_TOP_CLASSES - 1]] + [OTHER]


def top_const_label(tree: BinaryTree, classes: list[str]) -> int:
    name = tree.top_constituents()
    return classes.index(name) if name in classes[:-1] else len(classes) - 1


# ---------------------------------------------------------------- entry points


def _meta(task: str, examples: list[ProbingExample], classes: list[str]) -> dict:
    meta: dict = {"n": len(examples)}
    if task == WRD and examples:
        meta["mean_distance"] = float(np.mean([abs(ex.label[0] - ex.label[1]) for ex in examples]))
    elif task == BIGRAM_SHIFT and examples:
        meta["positive_rate"] = float(np.mean([ex.label for ex in examples]))
    elif task in (TREE_DEPTH, TOP_CONST) and examples:
        counts = Counter(ex.label for ex in examples)
        meta["class_frequencies"] = {str(classes[k]): counts[k] / len(examples)
                                     for k in range(len(classes))}
    return meta


def generate(task: str, spec: SyntheticCorpusSpec | None = None,
             grammar: PcfgGrammar | None = None) -> dict[str, Dataset]:
    """Generate train/dev/test splits for ``task``; a pure function of its arguments."""
    spec = spec or SyntheticCorpusSpec()
    spec.validate(task)
    grammar = grammar or load_grammar()
    word_classes = grammar.word_classes(spec.vocab_size)
    raw: dict[str, list[ProbingExample]] = {}
    for split, n in spec.sizes().items():
        rng = split_rng(spec.seed, split)
        if task == BIGRAM_SHIFT:
            raw[split] = _bigram_split(grammar, spec, n, rng)
        elif task == WRD:
            raw[split] = _wrd_split(grammar, spec, n, rng)
        elif task == TREE_DEPTH:
            raw[split] = _tree_depth_split(grammar, spec, n, rng)
        else:
            raw[split] = []
            for _ in range(n):
                tokens, tree = sample_sentence(grammar, spec, rng)
                raw[split].append(ProbingExample(tokens, TOP_CONST, -1, tree, original=tokens))
    if task == BIGRAM_SHIFT:
        classes = ["intact", "inverted"]
    elif task == WRD:
        classes = ["none", "I", "O"]
    elif task == TREE_DEPTH:
        classes = [str(d) for d in DEPTH_CLASSES]
    else:
        classes = top_const_classes([ex.gold_tree for ex in raw["train"]])
        for examples in raw.values():
            for ex in examples:
                ex.label = top_const_label(ex.gold_tree, classes)
    return {split: Dataset(task, examples, spec.vocab_size, spec.seed, list(classes),
                           list(word_classes), _meta(task, examples, classes))
            for split, examples in raw.items()}


def gen_bigram_shift(spec: SyntheticCorpusSpec | None = None, grammar=None) -> dict[str, Dataset]:
    return generate(BIGRAM_SHIFT, spec, grammar)


def gen_word_reorder(spec: SyntheticCorpusSpec | None = None, grammar=None) -> dict[str, Dataset]:
    return generate(WRD, spec, grammar)


def gen_pcfg_corpus(task: str = TREE_DEPTH, spec: SyntheticCorpusSpec | None = None,
                    grammar=None) -> dict[str, Dataset]:
    if task not in (TREE_DEPTH, TOP_CONST):
        raise ConfigError(f"gen_pcfg_corpus builds {TREE_DEPTH} or {TOP_CONST}, not {task!r}")
    return generate(task, spec, grammar)


def label_index(task: str, label) -> int:
    """Class index of a sentence-level label (depth classes start at 5)."""
    if task == TREE_DEPTH:
        return int(label) - MIN_DEPTH
    return int(label)
