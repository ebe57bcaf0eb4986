"""Command-line entry point: ``python -m ssan <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numeric failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from . import analysis, plot
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, parse_config
from .data.io import read_split, write_splits
from .data.probing import TASKS, WRD, SyntheticCorpusSpec, generate
from .errors import ConfigError, ContractError, DimensionError, FormatError, InputError, NumericError
from .gradcheck import REL_TOL, gradient_suite
from .model import SSANModel, config_for, evaluate, train
from .trees import extract_corpus

log = logging.getLogger("ssan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CKPT_NAME = "model.ckpt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else parse_config("")
    # an explicit flag beats both the config file and the environment
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _ckpt_path(path) -> Path:
    p = Path(path)
    return p / CKPT_NAME if p.is_dir() else p


def _load_model(path):
    return load_checkpoint(_ckpt_path(path)).to_model()


def _data_dir(args, cfg: RunConfig) -> Path:
    d = args.data if args.data is not None else cfg.data
    if d is None:
        raise ConfigError("no dataset directory given (--data or 'data' in the config)")
    d = Path(d)
    if not d.is_dir():
        raise InputError(f"dataset directory {d} does not exist")
    return d


def _fmt(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


# ------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    corpus = dict(cfg.corpus)
    task = args.task or corpus.pop("task", None)
    corpus.pop("task", None)
    if task is None:
        raise ConfigError("no task given (--task or 'task' in the config)")
    for key in ("vocab_size", "n_train", "n_dev", "n_test"):
        if getattr(args, key) is not None:
            corpus[key] = getattr(args, key)
    spec = SyntheticCorpusSpec(seed=cfg.seed, **corpus)
    splits = generate(task, spec)
    out = args.out if args.out is not None else cfg.out
    if out is None:
        raise ConfigError("no output directory given (--out)")
    for p in write_splits(out, splits):
        print(f"wrote {p} ({len(splits[p.stem].examples)} examples)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    data = _data_dir(args, cfg)
    train_set, dev_set = read_split(data, "train"), read_split(data, "dev")
    overrides = cfg.model_overrides()
    if args.selector_layer is not None:
        overrides["selector_layer"] = None if args.selector_layer == 0 else args.selector_layer
    if args.epochs is not None:
        cfg.train["epochs"] = args.epochs
    model_cfg = config_for(train_set, **overrides)
    model = SSANModel(model_cfg)
    result = train(model, train_set, dev_set, cfg.train_config(),
                   on_epoch=lambda r: log.info("%s", r))
    model.params.load_state_dict(result.best_state)
    meta = {"task": train_set.task, "best_epoch": result.best_epoch, "best_dev": result.best_dev,
            "history": result.history}
    out = Path(args.out if args.out is not None else cfg.out or "")
    if not str(out):
        raise ConfigError("no output directory given (--out)")
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / CKPT_NAME, Checkpoint.from_model(model, result.step, result.rng_state, meta))
    keys = sorted({k for r in result.history for k in r} - {"epoch"})
    _write_csv(out / "history.csv", ["epoch"] + keys,
               [[r["epoch"]] + [repr(float(r[k])) for k in keys] for r in result.history])
    print(f"wrote {out / CKPT_NAME} (best epoch {result.best_epoch}, dev {_fmt(result.best_dev)})")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    ds = read_split(args.data, args.split)
    metrics = evaluate(model, ds)
    for k in sorted(metrics):
        print(f"{k}={metrics[k]:.6f}")
    if args.out:
        _write_csv(Path(args.out), ["metric", "value"], [[k, repr(metrics[k])] for k in sorted(metrics)])
    return EXIT_OK


def probe_table(task: str, baseline: dict, selective: list[tuple[int | None, dict]]) -> tuple[list[str], list[list[str]]]:
    """Rows in the SAN / SSAN-per-layer layout; the delta is relative to SAN."""
    if task == WRD:
        header = ["Model", "Layer", "Insert", "Original", "Both", "Delta"]
        keys = ("insert", "original", "both")
    else:
        header = ["Model", "Layer", "Acc.", "Delta"]
        keys = ("accuracy",)
    ref = baseline[keys[-1]]
    rows = [["SANs", "--"] + [_fmt(baseline[k]) for k in keys] + ["--"]]
    for layer, m in selective:
        delta = (m[keys[-1]] - ref) / ref * 100.0 if ref else float("nan")
        rows.append(["SSANs", str(layer)] + [_fmt(m[k]) for k in keys] + [f"{delta:+.1f}%"])
    return header, rows


def _render(header, rows) -> str:
    widths = [max(len(r[c]) for r in [header] + rows) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [header] + rows]
    return "\n".join(lines)


def cmd_probe(args) -> int:
    ds = read_split(args.data, args.split)
    base = _load_model(args.baseline)
    if base.config.selector_layer is not None:
        raise InputError(f"baseline checkpoint {args.baseline} has a selector layer")
    selective = []
    for path in args.selective:
        m = _load_model(path)
        if m.config.selector_layer is None:
            raise InputError(f"checkpoint {path} has no selector layer")
        selective.append((m.config.selector_layer, evaluate(m, ds)))
    selective.sort(key=lambda x: x[0])
    header, rows = probe_table(ds.task, evaluate(base, ds), selective)
    print(_render(header, rows))
    if args.out:
        _write_csv(Path(args.out), header, rows)
    return EXIT_OK


def _models(args) -> list[tuple[str, object]]:
    named = []
    if args.baseline:
        named.append(("SAN", _load_model(args.baseline)))
    if args.selective:
        named.append(("SSAN", _load_model(args.selective)))
    if not named:
        raise UsageError("give --baseline and/or --selective checkpoints")
    return named


def _layer_for(model, layer: int | None) -> int:
    if layer is not None:
        return layer
    return model.config.selector_layer or 1


def cmd_extract_trees(args) -> int:
    models = _models(args)
    ds = read_split(args.data, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text, rows = [], []
    for name, model in models:
        layer = _layer_for(model, args.layer)
        ext = extract_corpus(model, ds, layer, args.mode)
        (out / f"{name.lower()}.trees").write_text("".join(t.to_sexpr() + "\n" for t in ext.trees),
                                                   encoding="utf-8")
        m = ext.metrics
        text.append(f"{name} layer={layer} {m.format()}")
        rows.append([name, layer, repr(m.precision), repr(m.recall), repr(m.f1), m.matched, m.predicted, m.gold])
    (out / "metrics.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    _write_csv(out / "metrics.csv", ["model", "layer", "precision", "recall", "f1", "matched", "predicted", "gold"],
               rows)
    print("\n".join(text))
    return EXIT_OK


def cmd_analyze_attention(args) -> int:
    models = _models(args)
    ds = read_split(args.data, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dist, classes, rates = {}, {}, []
    for name, model in models:
        layer = _layer_for(model, args.layer)
        dist[name] = analysis.distance_histogram(model, ds, layer, args.head).as_dict()
        if ds.word_classes:
            classes[name] = analysis.word_class_attention(model, ds, layer, args.head).as_dict()
        if model.config.selector_layer is not None:
            r = analysis.selection_rate(model, ds)
            rates.append([name, "overall", repr(r.overall)])
            rates += [[name, c, repr(v)] for c, v in r.per_class.items()]
    plot.emit_plot(dist, out / "distance", "attention mass by relative distance", "distance")
    print(_render(["distance"] + list(dist), [[b] + [_fmt(dist[n][b]) for n in dist] for b in analysis.DISTANCE_BUCKETS]))
    if classes:
        plot.emit_plot(classes, out / "word_class", "received attention by word class", "class")
        keys = list(next(iter(classes.values())))
        print(_render(["class"] + list(classes), [[k] + [_fmt(classes[n][k]) for n in classes] for k in keys]))
    if rates:
        _write_csv(out / "selection_rate.csv", ["model", "class", "rate"], rates)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    worst: dict[str, float] = {}
    for seed in range(args.seed, args.seed + args.seeds):
        for name, err in gradient_suite(seed):
            worst[name] = max(worst.get(name, 0.0), err)
    failed = [n for n, e in worst.items() if not e < args.tol]
    for name, err in worst.items():
        print(f"{name:16s} max_rel_err={err:.3e} {'FAIL' if name in failed else 'ok'}")
    if failed:
        raise NumericError(f"gradient check failed for {', '.join(failed)}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssan", description="Selective self-attention probing toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic probing corpus")
    g.add_argument("--task", choices=TASKS)
    g.add_argument("--out", type=Path)
    g.add_argument("--seed", type=int)
    g.add_argument("--config", type=Path)
    g.add_argument("--vocab-size", dest="vocab_size", type=int)
    g.add_argument("--n-train", dest="n_train", type=int)
    g.add_argument("--n-dev", dest="n_dev", type=int)
    g.add_argument("--n-test", dest="n_test", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a SAN or SSAN probe")
    t.add_argument("--config", type=Path)
    t.add_argument("--data", type=Path)
    t.add_argument("--out", type=Path)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--selector-layer", dest="selector_layer", type=int,
                   help="layer carrying the selector; 0 trains a plain SAN")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a split")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--split", default="test")
    e.add_argument("--out", type=Path)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("probe", help="compare a SAN against SSANs with the selector on different layers")
    pr.add_argument("--baseline", required=True, type=Path)
    pr.add_argument("--selective", required=True, type=Path, action="append")
    pr.add_argument("--data", required=True, type=Path)
    pr.add_argument("--split", default="test")
    pr.add_argument("--out", type=Path)
    pr.set_defaults(func=cmd_probe)

    for name, func, helptext in (("extract-trees", cmd_extract_trees, "induce trees from attention"),
                                 ("analyze-attention", cmd_analyze_attention, "attention statistics")):
        a = sub.add_parser(name, help=helptext)
        a.add_argument("--baseline", type=Path)
        a.add_argument("--selective", type=Path)
        a.add_argument("--data", required=True, type=Path)
        a.add_argument("--split", default="test")
        a.add_argument("--out", required=True, type=Path)
        a.add_argument("--layer", type=int)
        if name == "extract-trees":
            a.add_argument("--mode", choices=("geometric", "product"), default="geometric")
        else:
            a.add_argument("--head", type=int, help="single head instead of the head average")
        a.set_defaults(func=func)

    gc = sub.add_parser("grad-check", help="finite-difference check of every op and an SSAN layer")
    gc.add_argument("--seeds", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=REL_TOL)
    gc.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, InputError, DimensionError, ContractError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
