"""Tab-separated dataset files.

Line 1 is a header ``#ssan-data<TAB>{json}`` carrying the task, vocabulary
size, generator seed, label inventory and per-token word classes.  Every
following line is one example::

    task<TAB>label<TAB>token ids<TAB>gold tree (optional)
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import FormatError
from ..trees import parse_sexpr
from .probing import TASKS, WRD, Dataset, ProbingExample

MAGIC = "#ssan-data"
FORMAT_VERSION = 1


def _label_field(task: str, label) -> str:
    if task == WRD:
        return f"{label[0]},{label[1]}"
    return str(int(label))


def format_example(ex: ProbingExample) -> str:
    cols = [ex.task, _label_field(ex.task, ex.label), " ".join(map(str, ex.tokens))]
    if ex.gold_tree is not None:
        cols.append(ex.gold_tree.to_sexpr())
    return "\t".join(cols)


def write_dataset(path, dataset: Dataset) -> None:
    header = {
        "version": FORMAT_VERSION,
        "task": dataset.task,
        "vocab_size": dataset.vocab_size,
        "seed": dataset.seed,
        "classes": dataset.classes,
        "word_classes": dataset.word_classes,
        "meta": dataset.meta,
    }
    lines = [f"{MAGIC}\t{json.dumps(header, sort_keys=True)}"]
    lines += [format_example(ex) for ex in dataset.examples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_label(task: str, text: str, lineno: int):
    parts = text.split(",")
    want = 2 if task == WRD else 1
    if len(parts) != want:
        raise FormatError(f"line {lineno}: {task} label needs {want} column(s), got {text!r}")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise FormatError(f"line {lineno}: non-integer label {text!r}") from None
    return tuple(values) if task == WRD else values[0]


def parse_example(line: str, lineno: int, task: str, vocab_size: int) -> ProbingExample:
    cols = line.split("\t")
    if len(cols) not in (3, 4):
        raise FormatError(f"line {lineno}: expected 3 or 4 tab-separated fields, got {len(cols)}")
    if cols[0] != task:
        raise FormatError(f"line {lineno}: task {cols[0]!r} differs from header task {task!r}")
    label = _parse_label(task, cols[1], lineno)
    try:
        tokens = [int(t) for t in cols[2].split()]
    except ValueError:
        raise FormatError(f"line {lineno}: token ids must be integers") from None
    if not tokens or min(tokens) < 0 or max(tokens) >= vocab_size:
        raise FormatError(f"line {lineno}: token ids must lie in [0, {vocab_size})")
    tree = None
    if len(cols) == 4:
        try:
            tree = parse_sexpr(cols[3])
            tree.validate(len(tokens))
        except Exception as exc:
            raise FormatError(f"line {lineno}: bad gold tree: {exc}") from None
    if task == WRD and (label[0] == label[1] or not all(0 <= p < len(tokens) for p in label)):
        raise FormatError(f"line {lineno}: WRD positions {label} invalid for length {len(tokens)}")
    return ProbingExample(tokens, task, label, tree)


def read_dataset(path) -> Dataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 ({exc})") from None
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MAGIC + "\t"):
        raise FormatError(f"{path}: missing {MAGIC} header")
    try:
        header = json.loads(lines[0][len(MAGIC) + 1:])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line 1: bad header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {header.get('version')!r}")
    task = header.get("task")
    if task not in TASKS:
        raise FormatError(f"{path}: unknown task {task!r}")
    vocab = int(header["vocab_size"])
    examples = [parse_example(line, k, task, vocab)
                for k, line in enumerate(lines[1:], start=2) if line.strip()]
    return Dataset(task, examples, vocab, int(header["seed"]), list(header.get("classes", [])),
                   list(header.get("word_classes", [])), dict(header.get("meta", {})))


def write_splits(directory, splits: dict[str, Dataset]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, ds in splits.items():
        p = directory / f"{name}.tsv"
        write_dataset(p, ds)
        paths.append(p)
    return paths


def read_split(directory, name: str) -> Dataset:
    p = Path(directory) / f"{name}.tsv"
    if not p.exists():
        raise FormatError(f"missing dataset file {p}")
    return read_dataset(p)
