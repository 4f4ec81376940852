"""Training loops: source-only baseline and the category-contrast variants.

Each contrastive step: compute the supervised loss on a source batch,
refresh the dictionary with momentum-encoded keys (ground-truth labels for
source keys, pseudo-labels for target keys, entropy-scaled temperatures),
and, once every queue is full, add the category contrastive loss on a
target query batch. Only the query encoder and the classifier receive
gradients; the key encoder moves by EMA after every step.

Runs are bit-reproducible: all randomness flows from named child streams
of the config seed, and gradient accumulation order is fixed by the tape.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .data import DomainPair, LabeledSample, sample_key_batch, sample_query_batch
from .dictionary import CategoricalDictionary
from .errors import ContractError, ParameterError
from .labels import CategoryLabel, assign_pseudo_label, key_label
from .losses import cat_nce, key_temperature, prediction_entropy, supervised_loss
from .model import (
    CacoModel,
    MlpSpec,
    classifier_logits,
    classify,
    embed,
    encode,
    init_classifier,
    momentum_update,
    new_encoder_pair,
)
from .seeding import child_rng, child_seed

VARIANTS = ("baseline", "S", "T", "full")


@dataclass
class TrainConfig:
    variant: str = "full"
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.003
    momentum: float = 0.0  # SGD; nonzero values amplify contrastive oscillation here
    weight_decay: float = 0.01
    lr_decay_power: float = 0.9  # polynomial annealing; 0 keeps the rate constant
    encoder_momentum: float = 0.999  # EMA coefficient of the key encoder
    tau_base: float = 0.07
    queue_size: int = 100
    catnce_weight: float = 1.0
    key_batch_size: int = 8  # keys enqueued per step; 0 means batch_size
    warmup_epochs: int = 5  # supervised-only epochs before key enqueueing starts
    hidden: tuple[int, ...] = (64, 64)
    embed_dim: int = 16
    seed: int = 1

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.epochs < 0:
            raise ParameterError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be positive")
        if self.learning_rate <= 0 or self.tau_base <= 0:
            raise ParameterError("rates and temperatures must be positive")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be non-negative")
        if self.lr_decay_power < 0:
            raise ParameterError("lr_decay_power must be non-negative")
        if not 0.0 <= self.encoder_momentum <= 1.0:
            raise ParameterError("encoder_momentum must lie in [0, 1]")
        if self.queue_size < 1:
            raise ParameterError("queue_size must be positive")
        if self.warmup_epochs < 0:
            raise ParameterError("warmup_epochs must be non-negative")
        if self.key_batch_size < 0:
            raise ParameterError("key_batch_size must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    loss_sup: float
    loss_catnce: float | None
    target_accuracy: float
    target_mean_class_accuracy: float
    pseudo_label_churn: float | None
    dictionary_warm: bool

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss_sup": self.loss_sup,
            "loss_catnce": self.loss_catnce,
            "target_accuracy": self.target_accuracy,
            "target_mean_class_accuracy": self.target_mean_class_accuracy,
            "pseudo_label_churn": self.pseudo_label_churn,
            "dictionary_warm": self.dictionary_warm,
        }


@dataclass
class RunMetrics:
    variant: str
    seed: int
    records: list[EpochRecord] = field(default_factory=list)
    warm_epoch: int | None = None
    wall_clock_s: float = 0.0

    @property
    def final_accuracy(self) -> float | None:
        return self.records[-1].target_accuracy if self.records else None

    def jsonl_lines(self) -> list[str]:
        """Per-epoch records; deliberately timestamp-free so runs diff cleanly."""
        return [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]

    def write_jsonl(self, fp: IO[str]) -> None:
        for line in self.jsonl_lines():
            fp.write(line)
            fp.write("\n")

    SUMMARY_FIELDS = (
        "variant", "seed", "epochs", "warm_epoch",
        "target_accuracy", "mean_class_accuracy", "loss_sup", "loss_catnce",
        "wall_clock_s",
    )

    def summary_row(self) -> dict:
        last = self.records[-1] if self.records else None
        return {
            "variant": self.variant,
            "seed": self.seed,
            "epochs": len(self.records),
            "warm_epoch": self.warm_epoch,
            "target_accuracy": last.target_accuracy if last else None,
            "mean_class_accuracy": last.target_mean_class_accuracy if last else None,
            "loss_sup": last.loss_sup if last else None,
            "loss_catnce": last.loss_catnce if last else None,
            "wall_clock_s": round(self.wall_clock_s, 3),
        }


def write_summary_csv(path, metrics_list: Sequence[RunMetrics]) -> None:
    """Header plus one row per finished run; zero-epoch runs add no rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RunMetrics.SUMMARY_FIELDS)
        writer.writeheader()
        for m in metrics_list:
            if m.records:
                writer.writerow(m.summary_row())


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[int, float]
    mean_class_accuracy: float
    missing_classes: list[int]

    @property
    def has_missing_classes(self) -> bool:
        return bool(self.missing_classes)


def evaluate(model: CacoModel, samples: Sequence[LabeledSample]) -> EvalResult:
    """Accuracy and unweighted mean per-class accuracy under argmax prediction."""
    if not samples:
        raise ContractError("evaluate needs a non-empty sample list")
    x = np.stack([s.x for s in samples])
    truth = np.array([s.y.index for s in samples])
    predicted = model.predict_indices(x)
    accuracy = float((predicted == truth).mean())
    per_class: dict[int, float] = {}
    missing: list[int] = []
    for c in range(1, model.num_categories + 1):
        mask = truth == c
        if mask.any():
            per_class[c] = float((predicted[mask] == c).mean())
        else:
            missing.append(c)
    mean_acc = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return EvalResult(accuracy, per_class, mean_acc, missing)


def pseudo_label_churn(labels_t: Sequence, labels_prev: Sequence) -> float:
    """Fraction of samples whose label index changed between two passes."""
    if len(labels_t) != len(labels_prev):
        raise ContractError(
            f"label lists differ in length: {len(labels_t)} vs {len(labels_prev)}"
        )

    def indices(labels):
        return [l.index if isinstance(l, CategoryLabel) else int(l) for l in labels]

    a, b = indices(labels_t), indices(labels_prev)
    return float(np.mean([x != y for x, y in zip(a, b)]))


# ---------------------------------------------------------------------------
# Internals
# ---------------------------------------------------------------------------


class _Sgd:
    """SGD with momentum, L2 weight decay and optional polynomial lr annealing."""

    def __init__(self, params: list[Tensor], config: "TrainConfig", total_steps: int):
        self.params = params
        self.base_lr = config.learning_rate
        self.momentum = config.momentum
        self.weight_decay = config.weight_decay
        self.decay_power = config.lr_decay_power
        self.total_steps = max(1, total_steps)
        self.steps_done = 0
        self.velocity = [np.zeros_like(p.data) for p in params]

    def _lr(self) -> float:
        if not self.decay_power:
            return self.base_lr
        remaining = 1.0 - self.steps_done / self.total_steps
        return self.base_lr * max(remaining, 1e-3) ** self.decay_power

    def step(self, grads: dict[int, Tensor]) -> None:
        lr = self._lr()
        for p, v in zip(self.params, self.velocity):
            g = grads.get(p.id)
            v *= self.momentum
            if g is not None:
                v += g.data
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data -= lr * v
        self.steps_done += 1


def _init_model(config: TrainConfig, pair: DomainPair) -> CacoModel:
    dim = pair.source[0].x.shape[0]
    spec = MlpSpec((dim, *config.hidden, config.embed_dim))
    encoders = new_encoder_pair(
        spec, child_seed(config.seed, "encoder_init"), config.encoder_momentum
    )
    classifier = init_classifier(
        config.embed_dim, pair.num_categories, child_seed(config.seed, "classifier_init")
    )
    return CacoModel(spec, pair.num_categories, config.seed, encoders, classifier)


def _source_epoch_batches(pair: DomainPair, batch_size: int, rng) -> list[np.ndarray]:
    perm = rng.permutation(len(pair.source))
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]


class _QueryCycler:
    """Without-replacement target batches, re-permuting whenever exhausted."""

    def __init__(self, pair: DomainPair, batch_size: int, rng):
        self.pair = pair
        self.batch_size = min(batch_size, pair.target_x.shape[0])
        self.rng = rng
        self._buffer = np.zeros((0, pair.target_x.shape[1]))

    def next(self) -> np.ndarray:
        if self._buffer.shape[0] < self.batch_size:
            fresh = sample_query_batch(self.pair, self.pair.target_x.shape[0], self.rng)
            self._buffer = np.concatenate([self._buffer, fresh])
        batch, self._buffer = (
            self._buffer[: self.batch_size],
            self._buffer[self.batch_size:],
        )
        return batch


def _target_pseudo_indices(model: CacoModel, pair: DomainPair) -> np.ndarray:
    return model.predict_indices(pair.target_x)


def _epoch_record(
    model: CacoModel,
    pair: DomainPair,
    epoch: int,
    sup_losses: list[float],
    cat_losses: list[float],
    prev_pseudo: np.ndarray | None,
    warm: bool,
) -> tuple[EpochRecord, np.ndarray]:
    result = evaluate(model, pair.evaluation_samples())
    pseudo = _target_pseudo_indices(model, pair)
    churn = None if prev_pseudo is None else pseudo_label_churn(pseudo, prev_pseudo)
    record = EpochRecord(
        epoch=epoch,
        loss_sup=float(np.mean(sup_losses)) if sup_losses else 0.0,
        loss_catnce=float(np.mean(cat_losses)) if cat_losses else None,
        target_accuracy=result.accuracy,
        target_mean_class_accuracy=result.mean_class_accuracy,
        pseudo_label_churn=churn,
        dictionary_warm=warm,
    )
    return record, pseudo


# ---------------------------------------------------------------------------
# Training entry points
# ---------------------------------------------------------------------------


def train_source_only(config: TrainConfig, pair: DomainPair) -> tuple[CacoModel, RunMetrics]:
    """Supervised training on source data only; key encoder and dictionary untouched."""
    config.validate()
    if config.variant != "baseline":
        raise ContractError(f"source-only training expects variant 'baseline', got {config.variant!r}")
    started = time.monotonic()
    model = _init_model(config, pair)
    trainable = model.encoders.query.tensors() + [model.classifier.weight, model.classifier.bias]
    steps_per_epoch = -(-len(pair.source) // config.batch_size)
    optimizer = _Sgd(trainable, config, config.epochs * steps_per_epoch)
    rng_source = child_rng(config.seed, "source_batches")

    metrics = RunMetrics(config.variant, config.seed)
    prev_pseudo: np.ndarray | None = None
    source_x = np.stack([s.x for s in pair.source])
    source_y = [s.y for s in pair.source]

    for epoch in range(1, config.epochs + 1):
        sup_losses: list[float] = []
        for idx in _source_epoch_batches(pair, config.batch_size, rng_source):
            with Tape() as tape:
                emb = encode(model.encoders.query, Tensor(source_x[idx]))
                loss = supervised_loss(
                    classifier_logits(model.classifier, emb), [source_y[i] for i in idx]
                )
            optimizer.step(backward(loss.value, tape))
            sup_losses.append(loss.item())
        record, prev_pseudo = _epoch_record(
            model, pair, epoch, sup_losses, [], prev_pseudo, warm=False
        )
        metrics.records.append(record)

    metrics.wall_clock_s = time.monotonic() - started
    return model, metrics


def train_caco(
    config: TrainConfig,
    pair: DomainPair,
    *,
    keys_dump_fp: IO[str] | None = None,
) -> tuple[CacoModel, RunMetrics]:
    """Category-contrast training with an S / T / full key dictionary.

    Per step: supervised loss on a source batch; encode a key batch with the
    key encoder and enqueue it (keys drawn from source with true labels until
    the dictionary warms, then per variant); once warm, add the weighted
    category contrastive loss on a target query batch; SGD step on the query
    encoder and classifier; EMA step on the key encoder.
    """
    config.validate()
    if config.variant == "baseline":
        raise ContractError("use train_source_only for the baseline variant")
    started = time.monotonic()
    model = _init_model(config, pair)
    trainable = model.encoders.query.tensors() + [model.classifier.weight, model.classifier.bias]
    steps_per_epoch = -(-len(pair.source) // config.batch_size)
    optimizer = _Sgd(trainable, config, config.epochs * steps_per_epoch)
    rng_source = child_rng(config.seed, "source_batches")
    rng_keys = child_rng(config.seed, "key_batches")
    rng_query = child_rng(config.seed, "query_batches")

    dictionary = CategoricalDictionary(pair.num_categories, config.queue_size)
    queries = _QueryCycler(pair, config.batch_size, rng_query)
    metrics = RunMetrics(config.variant, config.seed)
    prev_pseudo: np.ndarray | None = None
    source_x = np.stack([s.x for s in pair.source])
    source_y = [s.y for s in pair.source]
    num_cat = pair.num_categories

    for epoch in range(1, config.epochs + 1):
        sup_losses: list[float] = []
        cat_losses: list[float] = []
        enqueueing = epoch > config.warmup_epochs
        if config.warmup_epochs and epoch == config.warmup_epochs + 1:
            # contrastive phase begins: bootstrap the key encoder from the
            # trained query encoder, exactly as at initialization
            for tq, tk in zip(model.encoders.query.tensors(), model.encoders.key.tensors()):
                tk.data = tq.data.copy()
        for idx in _source_epoch_batches(pair, config.batch_size, rng_source):
            if enqueueing:
                # keys first: cold dictionaries fill from ground-truth source samples
                key_variant = config.variant if dictionary.is_warm() else "S"
                n_keys = config.key_batch_size or config.batch_size
                key_batch = sample_key_batch(pair, n_keys, key_variant, rng_keys)
                key_emb = embed(model.encoders.key, np.stack([k.x for k in key_batch]))
                key_probs = classify(model.classifier, key_emb)
                for draw, vec, probs in zip(key_batch, key_emb, key_probs):
                    label = key_label(draw.domain, draw.label, probs)
                    tau = key_temperature(
                        config.tau_base, prediction_entropy(probs), num_cat
                    )
                    dictionary.enqueue(vec, label.index, tau, draw.domain)
                if metrics.warm_epoch is None and dictionary.is_warm():
                    metrics.warm_epoch = epoch

            with Tape() as tape:
                emb = encode(model.encoders.query, Tensor(source_x[idx]))
                sup = supervised_loss(
                    classifier_logits(model.classifier, emb), [source_y[i] for i in idx]
                )
                total = sup.value
                if dictionary.is_warm() and config.catnce_weight != 0.0:
                    q_emb = encode(model.encoders.query, Tensor(queries.next()))
                    q_labels = [
                        assign_pseudo_label(p)
                        for p in classify(model.classifier, q_emb.data)
                    ]
                    cat = cat_nce(q_emb, q_labels, dictionary.snapshot())
                    total = ad.add(total, ad.scale(cat.value, config.catnce_weight))
                    cat_losses.append(cat.item())
            optimizer.step(backward(total, tape))
            momentum_update(model.encoders)
            sup_losses.append(sup.item())

        record, prev_pseudo = _epoch_record(
            model, pair, epoch, sup_losses, cat_losses, prev_pseudo, dictionary.is_warm()
        )
        metrics.records.append(record)

    metrics.wall_clock_s = time.monotonic() - started
    if keys_dump_fp is not None:
        dictionary.dump_jsonl(keys_dump_fp)
    return model, metrics
