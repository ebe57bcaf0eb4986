"""Stacked SAN/SSAN encoder, probing heads, training loop and evaluation."""

from __future__ import annotations

import copy
import logging
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import AttentionConfig, ProjectionSet, multi_head_forward
from .autodiff import ParamStore, Tape, Tensor
from .data.probing import WRD, Dataset, label_index
from .errors import ConfigError, InputError, NumericError
from .selector import GateMatrix, SelectorParams, gumbel_sigmoid, infer_hard, selection_energies, temperature

log = logging.getLogger(__name__)

SENTENCE = "sentence"
POSITION = "position"
# per-position label inventory for WRD
NONE_LABEL, I_LABEL, O_LABEL = 0, 1, 2


@dataclass
class ModelConfig:
    vocab_size: int = 200
    d_model: int = 64
    ffn_dim: int = 256
    n_heads: int = 4
    n_layers: int = 4
    selector_layer: int | None = None
    tau: float = 0.5
    tau_final: float | None = None
    selector_scaled: bool = False
    max_len: int = 64
    head: str = SENTENCE
    n_classes: int = 2
    dropout: float = 0.0
    embed_std: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        AttentionConfig(self.d_model, self.n_heads)
        if self.n_layers < 0:
            raise ConfigError("n_layers must be >= 0")
        if self.selector_layer is not None and not 1 <= self.selector_layer <= self.n_layers:
            raise ConfigError(f"selector_layer {self.selector_layer} outside 1..{self.n_layers}")
        if self.head not in (SENTENCE, POSITION):
            raise ConfigError(f"unknown head kind {self.head!r}")
        if self.head == POSITION and self.n_classes != 3:
            raise ConfigError("per-position head predicts exactly 3 labels (none, I, O)")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if not self.tau > 0 or (self.tau_final is not None and not self.tau_final > 0):
            raise ConfigError("selector temperature must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(...)."""
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # keyed by name so adding the selector never shifts other initial values
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


class SSANModel:
    """Pre-norm Transformer encoder; one layer optionally carries the selector."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        self.attn_cfg = AttentionConfig(config.d_model, config.n_heads)
        self.params = ParamStore()
        self._pe = positional_encoding(config.max_len, config.d_model)
        self._init_params()

    # ----------------------------------------------------------- parameters

    def _normal(self, name: str, shape, std: float) -> Tensor:
        return self.params.add(name, _param_rng(self.config.seed, name).normal(0.0, std, shape))

    def _const(self, name: str, shape, value: float) -> Tensor:
        return self.params.add(name, np.full(shape, value))

    def _init_params(self) -> None:
        c = self.config
        d, f = c.d_model, c.ffn_dim
        self._normal("embed", (c.vocab_size, d), c.embed_std)
        for l in range(1, c.n_layers + 1):
            p = f"layer{l}."
            self._const(p + "ln1.gain", (d,), 1.0)
            self._const(p + "ln1.bias", (d,), 0.0)
            for w in ("w_q", "w_k", "w_v", "w_o"):
                self._normal(p + w, (d, d), d ** -0.5)
            if l == c.selector_layer:
                # energies start O(1) instead of saturating the sigmoid
                self._normal(p + "sel.w_qs", (d, d), d ** -0.75)
                self._normal(p + "sel.w_ks", (d, d), d ** -0.75)
            self._const(p + "ln2.gain", (d,), 1.0)
            self._const(p + "ln2.bias", (d,), 0.0)
            self._normal(p + "ffn.w1", (d, f), d ** -0.5)
            self._const(p + "ffn.b1", (f,), 0.0)
            self._normal(p + "ffn.w2", (f, d), f ** -0.5)
            self._const(p + "ffn.b2", (d,), 0.0)
        self._const("final_ln.gain", (d,), 1.0)
        self._const("final_ln.bias", (d,), 0.0)
        if c.head == SENTENCE:
            self._normal("head.w1", (d, d), d ** -0.5)
            self._const("head.b1", (d,), 0.0)
            self._normal("head.w2", (d, d), d ** -0.5)
            self._const("head.b2", (d,), 0.0)
            self._normal("head.w3", (d, c.n_classes), d ** -0.5)
            self._const("head.b3", (c.n_classes,), 0.0)
        else:
            self._normal("head.w", (d, 3), d ** -0.5)
            self._const("head.b", (3,), 0.0)

    def projections(self, layer: int) -> ProjectionSet:
        p = self.params
        return ProjectionSet(*(p[f"layer{layer}.{w}"] for w in ("w_q", "w_k", "w_v", "w_o")))

    def selector_params(self) -> SelectorParams | None:
        l = self.config.selector_layer
        if l is None:
            return None
        return SelectorParams(self.params[f"layer{l}.sel.w_qs"], self.params[f"layer{l}.sel.w_ks"])

    # ------------------------------------------------------------- forward

    def embed(self, tokens) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        n = tokens.shape[-1]
        if n > self.config.max_len:
            raise InputError(f"sequence length {n} exceeds max_len {self.config.max_len}")
        return ad.add(ad.embedding(self.params["embed"], tokens), self._pe[:n])

    def encoder_forward(self, x: Tensor, train: bool = False, rng: np.random.Generator | None = None,
                        tau: float | None = None, noise: dict | None = None,
                        ) -> tuple[Tensor, list[Tensor], list[GateMatrix | None]]:
        """Run every layer; returns final states, per-layer attention, per-layer gates.

        ``noise`` maps a layer index to frozen Gumbel draws (gradient checks).
        """
        c = self.config
        p = self.params
        attn, gates = [], []
        for l in range(1, c.n_layers + 1):
            pre = f"layer{l}."
            h = ad.layer_norm(x, p[pre + "ln1.gain"], p[pre + "ln1.bias"])
            gate = None
            if l == c.selector_layer:
                energies = selection_energies(h, self.selector_params(), c.selector_scaled)
                if train:
                    frozen = None if noise is None else noise.get(l)
                    gate = gumbel_sigmoid(energies, c.tau if tau is None else tau, rng, frozen)
                else:
                    gate = infer_hard(energies)
            a, w = multi_head_forward(h, self.projections(l), self.attn_cfg, gate)
            if train and c.dropout > 0:
                a = ad.dropout(a, c.dropout, rng)
            x = ad.add(x, a)
            h = ad.layer_norm(x, p[pre + "ln2.gain"], p[pre + "ln2.bias"])
            h = ad.relu(ad.add(ad.matmul(h, p[pre + "ffn.w1"]), p[pre + "ffn.b1"]))
            h = ad.add(ad.matmul(h, p[pre + "ffn.w2"]), p[pre + "ffn.b2"])
            if train and c.dropout > 0:
                h = ad.dropout(h, c.dropout, rng)
            x = ad.add(x, h)
            attn.append(w)
            gates.append(gate)
        if c.n_layers:
            x = ad.layer_norm(x, p["final_ln.gain"], p["final_ln.bias"])
        return x, attn, gates

    def head(self, x: Tensor) -> Tensor:
        p = self.params
        if self.config.head == SENTENCE:
            h = ad.mean(x, axis=-2)
            h = ad.relu(ad.add(ad.matmul(h, p["head.w1"]), p["head.b1"]))
            h = ad.relu(ad.add(ad.matmul(h, p["head.w2"]), p["head.b2"]))
            return ad.add(ad.matmul(h, p["head.w3"]), p["head.b3"])
        return ad.add(ad.matmul(x, p["head.w"]), p["head.b"])

    def forward(self, tokens, train: bool = False, rng=None, tau=None, noise=None):
        """Logits for a (B, N) batch of equal-length token sequences."""
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        x, attn, gates = self.encoder_forward(self.embed(tokens), train, rng, tau, noise)
        return self.head(x), attn, gates

    def loss(self, tokens, targets, train: bool = True, rng=None, tau=None, noise=None) -> Tensor:
        logits, _, _ = self.forward(tokens, train, rng, tau, noise)
        if self.config.head == POSITION:
            b, n, k = logits.shape
            return ad.cross_entropy(ad.reshape(logits, (b * n, k)), np.asarray(targets).reshape(-1))
        return ad.cross_entropy(logits, targets)

    # -------------------------------------------------------------- analysis

    def attention_maps(self, tokens) -> list[np.ndarray]:
        """Inference-mode attention per layer for one sentence, each (heads, N, N)."""
        _, attn, _ = self.forward(np.asarray(tokens)[None, :])
        return [w.data[0] for w in attn]

    def gate_maps(self, tokens) -> list[np.ndarray | None]:
        _, _, gates = self.forward(np.asarray(tokens)[None, :])
        return [None if g is None else g.sample.data[0] for g in gates]

    def copy(self) -> "SSANModel":
        return copy.deepcopy(self)


# ------------------------------------------------------------------ batching


def targets_for(model: SSANModel, task: str, examples) -> np.ndarray:
    if model.config.head == POSITION:
        if task != WRD:
            raise ConfigError(f"per-position head cannot be trained on {task!r}")
        out = np.zeros((len(examples), len(examples[0].tokens)), dtype=np.int64)
        for r, ex in enumerate(examples):
            out[r, ex.label[0]] = I_LABEL
            out[r, ex.label[1]] = O_LABEL
        return out
    if task == WRD:
        raise ConfigError("WRD needs the per-position head")
    labels = np.array([label_index(task, ex.label) for ex in examples], dtype=np.int64)
    if labels.min() < 0 or labels.max() >= model.config.n_classes:
        raise ConfigError(f"labels exceed the head's {model.config.n_classes} classes")
    return labels


def length_batches(examples, batch_size: int, rng: np.random.Generator | None = None) -> list[list[int]]:
    """Index batches of equal-length sentences, so no padding is needed."""
    by_len: dict[int, list[int]] = {}
    for k, ex in enumerate(examples):
        by_len.setdefault(len(ex.tokens), []).append(k)
    batches = []
    for n in sorted(by_len):
        idx = np.array(by_len[n])
        if rng is not None:
            rng.shuffle(idx)
        batches += [idx[s:s + batch_size].tolist() for s in range(0, len(idx), batch_size)]
    if rng is not None:
        order = rng.permutation(len(batches))
        batches = [batches[k] for k in order]
    return batches


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0


@dataclass
class TrainResult:
    model: SSANModel
    best_state: dict
    best_epoch: int
    best_dev: float
    history: list[dict] = field(default_factory=list)
    rng_state: dict | None = None
    step: int = 0


def _primary_metric(metrics: dict) -> float:
    return metrics["both"] if "both" in metrics else metrics["accuracy"]


def train(model: SSANModel, train_set: Dataset, dev_set: Dataset | None = None,
          cfg: TrainConfig | None = None, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam training over length-bucketed batches; deterministic given ``cfg.seed``.

    The parameters of the epoch with the best dev score (train score when no
    dev set is given) are returned in ``best_state``.
    """
    cfg = cfg or TrainConfig()
    if not train_set.examples:
        raise InputError("training set is empty")
    task = train_set.task
    examples = train_set.examples
    rng = np.random.default_rng([cfg.seed, 1])
    n_steps = cfg.epochs * len(length_batches(examples, cfg.batch_size))
    c = model.config
    history: list[dict] = []
    best = (-1.0, model.params.state_dict(), 0)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for batch in length_batches(examples, cfg.batch_size, rng):
            exs = [examples[k] for k in batch]
            tokens = np.array([ex.tokens for ex in exs], dtype=np.int64)
            targets = targets_for(model, task, exs)
            tau = temperature(step, n_steps, c.tau, c.tau_final)
            model.params.zero_grad()
            with Tape():
                loss = model.loss(tokens, targets, train=True, rng=rng, tau=tau)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"loss became {value} at epoch {epoch}, step {step}")
            ad.backward(loss)
            ad.adam_step(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.clip_norm)
            total += value * len(batch)
            count += len(batch)
            step += 1
        record = {"epoch": epoch, "loss": total / count}
        scored = dev_set if dev_set is not None and dev_set.examples else train_set
        metrics = evaluate(model, scored)
        record.update({f"dev_{k}": v for k, v in metrics.items()})
        score = _primary_metric(metrics)
        if score > best[0]:
            best = (score, model.params.state_dict(), epoch)
        history.append(record)
        log.info("epoch %d loss %.4f dev %.4f", epoch, record["loss"], score)
        if on_epoch is not None:
            on_epoch(record)
    return TrainResult(model, best[1], best[2], best[0], history, rng.bit_generator.state, step)


# -------------------------------------------------------------- evaluation


def predict(model: SSANModel, dataset: Dataset, batch_size: int = 256) -> list:
    """Inference-mode predictions: class index per sentence, or (I, O) positions."""
    out: list = [None] * len(dataset.examples)
    for batch in length_batches(dataset.examples, batch_size):
        tokens = np.array([dataset.examples[k].tokens for k in batch], dtype=np.int64)
        logits, _, _ = model.forward(tokens)
        if model.config.head == POSITION:
            z = logits.data - logits.data.max(axis=-1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
            ins = logp[:, :, I_LABEL].argmax(axis=1)
            org = logp[:, :, O_LABEL].argmax(axis=1)
            for r, k in enumerate(batch):
                out[k] = (int(ins[r]), int(org[r]))
        else:
            for r, k in enumerate(batch):
                out[k] = int(logits.data[r].argmax())
    return out


def score_predictions(task: str, predictions: list, examples, n_classes: int | None = None) -> dict:
    if not examples:
        raise InputError("cannot evaluate on an empty dataset")
    if task == WRD:
        ins = np.array([p[0] == ex.label[0] for p, ex in zip(predictions, examples)])
        org = np.array([p[1] == ex.label[1] for p, ex in zip(predictions, examples)])
        return {"insert": float(ins.mean()), "original": float(org.mean()),
                "both": float((ins & org).mean())}
    gold = np.array([label_index(task, ex.label) for ex in examples])
    pred = np.asarray(predictions)
    metrics = {"accuracy": float((gold == pred).mean())}
    if n_classes:
        f1 = []
        for k in range(n_classes):
            tp = np.sum((pred == k) & (gold == k))
            denom = np.sum(pred == k) + np.sum(gold == k)
            f1.append(2.0 * tp / denom if denom else 0.0)
        metrics["macro_f1"] = float(np.mean(f1))
    return metrics


def evaluate(model: SSANModel, dataset: Dataset) -> dict:
    """Accuracy (sentence tasks) or Insert/Original/Both accuracy (WRD)."""
    if (model.config.head == POSITION) != (dataset.task == WRD):
        raise ConfigError(f"model head {model.config.head!r} does not fit task {dataset.task!r}")
    if model.config.head == SENTENCE and dataset.classes and len(dataset.classes) != model.config.n_classes:
        raise ConfigError(f"dataset has {len(dataset.classes)} classes, head has {model.config.n_classes}")
    preds = predict(model, dataset)
    n = model.config.n_classes if model.config.head == SENTENCE else None
    return score_predictions(dataset.task, preds, dataset.examples, n)


def config_for(dataset: Dataset, **overrides) -> ModelConfig:
    """Model config whose head fits ``dataset``'s task."""
    head = POSITION if dataset.task == WRD else SENTENCE
    n_classes = 3 if head == POSITION else max(len(dataset.classes), 2)
    base = dict(vocab_size=dataset.vocab_size, head=head, n_classes=n_classes,
                max_len=max(64, dataset.max_len()))
    base.update(overrides)
    return ModelConfig(**base)
