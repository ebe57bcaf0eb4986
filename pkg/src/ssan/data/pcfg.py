"""Binary PCFG: grammar file parsing, lexicon allocation and tree sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import FormatError, InputError
from ..trees import BinaryTree

CONTENT_CLASSES = ("noun", "verb", "adj")
FUNCTION_CLASSES = ("prep", "det", "punct", "other")
WORD_CLASSES = CONTENT_CLASSES + FUNCTION_CLASSES


@dataclass
class Rule:
    lhs: str
    left: str
    right: str
    weight: float


@dataclass
class PcfgGrammar:
    start: str
    rules: dict[str, list[Rule]]
    # preterminal -> (word class, vocabulary share)
    lexicon: dict[str, tuple[str, float]]
    version: int = 1
    _words: dict = field(default_factory=dict, repr=False)

    @property
    def nonterminals(self) -> list[str]:
        return list(self.rules)

    @property
    def preterminals(self) -> list[str]:
        return list(self.lexicon)

    def validate(self) -> None:
        if self.start not in self.rules:
            raise FormatError(f"start symbol {self.start!r} has no rules")
        for lhs, rules in self.rules.items():
            for r in rules:
                if r.weight <= 0:
                    raise FormatError(f"rule {lhs} -> {r.left} {r.right} has non-positive weight")
                for sym in (r.left, r.right):
                    if sym not in self.rules and sym not in self.lexicon:
                        raise FormatError(f"symbol {sym!r} in {lhs} rule is undefined")
        for pre, (cls, share) in self.lexicon.items():
            if cls not in WORD_CLASSES:
                raise FormatError(f"preterminal {pre!r} has unknown word class {cls!r}")
            if share <= 0:
                raise FormatError(f"preterminal {pre!r} has non-positive share")
        # every nonterminal must derive a terminal string
        productive = set(self.lexicon)
        changed = True
        while changed:
            changed = False
            for lhs, rules in self.rules.items():
                if lhs not in productive and any(r.left in productive and r.right in productive for r in rules):
                    productive.add(lhs)
                    changed = True
        dead = [nt for nt in self.rules if nt not in productive]
        if dead:
            raise FormatError(f"nonterminals derive no terminal string: {dead}")

    # ------------------------------------------------------------ lexicon

    def allocate_vocab(self, vocab_size: int) -> dict[str, np.ndarray]:
        """Split ids 0..vocab_size-1 among preterminals by share (largest remainder)."""
        if vocab_size in self._words:
            return self._words[vocab_size]
        names = self.preterminals
        if vocab_size < len(names):
            raise InputError(f"vocab_size {vocab_size} smaller than {len(names)} preterminals")
        shares = np.array([self.lexicon[p][1] for p in names])
        exact = shares / shares.sum() * vocab_size
        counts = np.maximum(np.floor(exact).astype(int), 1)
        while counts.sum() > vocab_size:
            counts[np.argmax(counts)] -= 1
        order = np.argsort(-(exact - np.floor(exact)), kind="stable")
        k = 0
        while counts.sum() < vocab_size:
            counts[order[k % len(order)]] += 1
            k += 1
        out, start = {}, 0
        for name, c in zip(names, counts):
            out[name] = np.arange(start, start + c)
            start += c
        self._words[vocab_size] = out
        return out

    def word_classes(self, vocab_size: int) -> list[str]:
        classes = [""] * vocab_size
        for pre, ids in self.allocate_vocab(vocab_size).items():
            for i in ids:
                classes[i] = self.lexicon[pre][0]
        return classes

    # ------------------------------------------------------------ sampling

    def sample(self, rng: np.random.Generator, vocab_size: int,
               max_depth: int = 11, max_len: int = 20) -> tuple[list[int], BinaryTree]:
        """Draw one derivation; raises :class:`TooLarge` when a bound is exceeded."""
        words = self.allocate_vocab(vocab_size)
        rule_cdf, word_cdf = self._cdfs(vocab_size)
        tokens: list[int] = []

        def expand(symbol: str, level: int) -> BinaryTree:
            if level + 1 > max_depth:
                raise TooLarge
            if symbol in self.lexicon:
                if len(tokens) >= max_len:
                    raise TooLarge
                ids = words[symbol]
                tokens.append(int(ids[_draw(word_cdf[symbol], rng)]))
                return BinaryTree.leaf(len(tokens) - 1, symbol)
            r = self.rules[symbol][_draw(rule_cdf[symbol], rng)]
            left = expand(r.left, level + 1)
            right = expand(r.right, level + 1)
            return BinaryTree.join(left, right, symbol)

        tree = expand(self.start, 0)
        return tokens, tree

    def _cdfs(self, vocab_size: int):
        key = ("cdf", vocab_size)
        if key not in self._words:
            rule_cdf = {}
            for lhs, rules in self.rules.items():
                w = np.array([r.weight for r in rules])
                rule_cdf[lhs] = np.cumsum(w / w.sum())
            word_cdf = {}
            for pre, ids in self.allocate_vocab(vocab_size).items():
                # Zipfian frequencies within each preterminal
                zipf = 1.0 / np.arange(1, len(ids) + 1)
                word_cdf[pre] = np.cumsum(zipf / zipf.sum())
            self._words[key] = (rule_cdf, word_cdf)
        return self._words[key]


def _draw(cdf: np.ndarray, rng: np.random.Generator) -> int:
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)


class TooLarge(Exception):
    """Derivation exceeded the depth or length bound."""


def parse_grammar(text: str) -> PcfgGrammar:
    start, version = None, 1
    rules: dict[str, list[Rule]] = {}
    lexicon: dict[str, tuple[str, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "version":
                version = int(parts[1])
            elif parts[0] == "start":
                start = parts[1]
            elif parts[0] == "lex":
                _, pre, cls, share = parts
                lexicon[pre] = (cls, float(share))
            elif len(parts) == 5 and parts[1] == "->":
                lhs, _, left, right, weight = parts
                rules.setdefault(lhs, []).append(Rule(lhs, left, right, float(weight)))
            else:
                raise ValueError
        except (ValueError, IndexError):
            raise FormatError(f"grammar line {lineno}: cannot parse {raw.strip()!r}") from None
    if version != 1:
        raise FormatError(f"unsupported grammar version {version}")
    if start is None:
        raise FormatError("grammar has no start symbol")
    g = PcfgGrammar(start, rules, lexicon, version)
    g.validate()
    return g


def load_grammar(path: str | Path | None = None) -> PcfgGrammar:
    if path is None:
        text = resources.files("ssan.data").joinpath("default.grammar").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_grammar(text)
