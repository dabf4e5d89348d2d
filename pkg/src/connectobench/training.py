"""Seeded training and evaluation harness.

Implements the warmup + linear-decay schedule, per-epoch metrics over all
three splits, and multi-seed experiments that corrupt a dataset copy with a
fixed edge-drop probability before training. Everything is deterministic
given the config: repeated runs produce bit-identical curves.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward, cross_entropy
from .data import Dataset, DatasetSplits, drop_edges, split_dataset
from .errors import ConfigError, ContractError, DivergenceError
from .models import (
    AttnVariantConfig,
    ExphormerConfig,
    ResidualGCNConfig,
    build_model,
)
from .optim import AdamState, adam_step, zero_grads
from .rng import seeded_rng

MODEL_KINDS = ("residual_gcn", "exphormer", "attn_residual_gcn")
LR_FLOOR = 1e-6


@dataclass
class TrainConfig:
    base_lr: float = 0.001
    decay_per_epoch: float = 1e-5
    total_epochs: int = 100
    warmup_epochs: int = 5
    batch_size: int = 16
    seeds: tuple[int, ...] = (0, 1, 2)
    model_kind: str = "residual_gcn"
    decay_rule: str = "linear"  # "linear" subtracts per epoch; "exponential" multiplies
    gcn: ResidualGCNConfig = field(default_factory=ResidualGCNConfig)
    exphormer: ExphormerConfig = field(default_factory=ExphormerConfig)
    variant: AttnVariantConfig = field(default_factory=AttnVariantConfig)

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be > 0")
        if self.decay_per_epoch < 0:
            raise ConfigError("decay_per_epoch must be >= 0")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError("need 0 <= warmup_epochs < total_epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}")
        if self.decay_rule not in ("linear", "exponential"):
            raise ConfigError("decay_rule must be 'linear' or 'exponential'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "gcn" in d:
            d["gcn"] = ResidualGCNConfig(**d["gcn"])
        if "exphormer" in d:
            d["exphormer"] = ExphormerConfig(**d["exphormer"])
        if "variant" in d:
            d["variant"] = AttnVariantConfig(**d["variant"])
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return cls(**d)


@dataclass
class EpochMetrics:
    epoch: int
    train_acc: float
    val_acc: float
    test_acc: float
    loss: float
    lr: float


@dataclass
class RunResult:
    seed: int
    metrics: list[EpochMetrics]
    best_val_epoch: int
    val_at_best: float
    test_at_best_val: float

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "best_val_epoch": self.best_val_epoch,
            "val_at_best": self.val_at_best,
            "test_at_best_val": self.test_at_best_val,
            "curves": {
                "epoch": [m.epoch for m in self.metrics],
                "train_acc": [m.train_acc for m in self.metrics],
                "val_acc": [m.val_acc for m in self.metrics],
                "test_acc": [m.test_acc for m in self.metrics],
                "loss": [m.loss for m in self.metrics],
                "lr": [m.lr for m in self.metrics],
            },
        }


@dataclass
class ExperimentResult:
    model_kind: str
    drop_p: float
    seeds: tuple[int, ...]
    runs: list[RunResult]
    mean_test: float
    std_test: float
    mean_val: float
    std_val: float

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "drop_p": self.drop_p,
            "seeds": list(self.seeds),
            "mean_test": self.mean_test,
            "std_test": self.std_test,
            "mean_val": self.mean_val,
            "std_val": self.std_val,
            "runs": [r.to_dict() for r in self.runs],
        }


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate at an epoch: linear warmup, then decay towards a floor."""
    if not 0 <= epoch < cfg.total_epochs:
        raise ContractError(
            f"epoch {epoch} outside [0, {cfg.total_epochs})")
    if epoch < cfg.warmup_epochs:
        # clamp: the product/divide can round one ulp above base_lr
        return min(cfg.base_lr, cfg.base_lr * (epoch + 1) / cfg.warmup_epochs)
    k = epoch - cfg.warmup_epochs + 1
    if cfg.decay_rule == "linear":
        lr = cfg.base_lr - k * cfg.decay_per_epoch
    else:
        lr = cfg.base_lr * (1.0 - cfg.decay_per_epoch) ** k
    return max(lr, min(LR_FLOOR, cfg.base_lr))


def evaluate(model, prepared, indices) -> float:
    """Accuracy percent over the indexed graphs, eval mode.

    Argmax ties resolve to the lowest class index.
    """
    indices = list(indices)
    if not indices:
        raise ContractError("evaluate called with an empty index list")
    correct = 0
    for i in indices:
        prep = prepared[i]
        logits = model.forward(prep, mode="eval")
        if int(np.argmax(logits.data[0])) == prep.label:
            correct += 1
    return 100.0 * correct / len(indices)


def train_epoch(model, prepared, splits: DatasetSplits, cfg: TrainConfig,
                epoch: int, opt: AdamState, rng, lr: float | None = None
                ) -> EpochMetrics:
    """One pass over shuffled train graphs with mini-batch Adam updates.

    Gradients accumulate over each mini-batch and are averaged before the
    step. Raises DivergenceError on the first non-finite loss. Deterministic
    given (model state, rng).
    """
    lr_value = lr_at(epoch, cfg) if lr is None else lr
    order = [splits.train[i] for i in rng.permutation(len(splits.train))]
    total_loss = 0.0
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        zero_grads(model.params)
        for gi in batch:
            prep = prepared[gi]
            tape = Tape()
            logits = model.forward(prep, mode="train", tape=tape, rng=rng)
            loss = cross_entropy(logits, [prep.label], tape=tape)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, start // cfg.batch_size, value)
            total_loss += value
            backward(tape, loss)
        inv = 1.0 / len(batch)
        for p in model.params.values():
            if p.grad is not None:
                p.grad *= inv
        adam_step(model.params, lr_value, opt)
    return EpochMetrics(
        epoch=epoch,
        train_acc=evaluate(model, prepared, splits.train),
        val_acc=evaluate(model, prepared, splits.val),
        test_acc=evaluate(model, prepared, splits.test),
        loss=total_loss / max(len(order), 1),
        lr=lr_value,
    )


def _make_model(cfg: TrainConfig, in_dim: int, num_classes: int, seed: int):
    return build_model(cfg.model_kind, in_dim, num_classes, seed,
                       gcn_cfg=cfg.gcn, exphormer_cfg=cfg.exphormer,
                       variant=cfg.variant)


def run_single_seed(cfg: TrainConfig, dataset: Dataset, drop_p: float,
                    splits: DatasetSplits, seed: int) -> RunResult:
    """Corrupt the dataset with one edge-drop stream, train the full schedule."""
    corrupted = [drop_edges(g, drop_p, seeded_rng(seed, "edge-drop", i))
                 for i, g in enumerate(dataset.graphs)]
    model = _make_model(cfg, dataset.feature_dim, dataset.num_classes, seed)
    prepared = model.prepare_dataset(corrupted, run_seed=seed)
    opt = AdamState()
    metrics = []
    for epoch in range(cfg.total_epochs):
        rng = seeded_rng(seed, "epoch", epoch)
        metrics.append(train_epoch(model, prepared, splits, cfg, epoch, opt, rng))
    vals = [m.val_acc for m in metrics]
    best = int(np.argmax(vals))  # earliest epoch wins ties
    return RunResult(seed=seed, metrics=metrics, best_val_epoch=best,
                     val_at_best=metrics[best].val_acc,
                     test_at_best_val=metrics[best].test_acc)


def aggregate_accuracy(values) -> tuple[float, float]:
    """Mean and sample standard deviation; a single value reports std 0.00."""
    arr = np.asarray(list(values), dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def run_experiment(cfg: TrainConfig, dataset: Dataset, drop_p: float,
                   splits: DatasetSplits | None = None) -> ExperimentResult:
    """Train one config across all seeds and aggregate test-at-best-val."""
    cfg.validate()
    if not 0.0 <= drop_p <= 1.0:
        raise ConfigError(f"drop_p must be in [0, 1], got {drop_p}")
    if splits is None:
        splits = split_dataset(dataset.graphs, seed=0)
    runs = [run_single_seed(cfg, dataset, drop_p, splits, seed)
            for seed in cfg.seeds]
    mean_test, std_test = aggregate_accuracy(r.test_at_best_val for r in runs)
    mean_val, std_val = aggregate_accuracy(r.val_at_best for r in runs)
    return ExperimentResult(model_kind=cfg.model_kind, drop_p=drop_p,
                            seeds=tuple(cfg.seeds), runs=runs,
                            mean_test=mean_test, std_test=std_test,
                            mean_val=mean_val, std_val=std_val)


def write_run_json(result: ExperimentResult, path, extra: dict | None = None
                   ) -> None:
    payload = result.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_curves_csv(run: RunResult, path) -> None:
    """Per-epoch accuracy rows for the three splits, plotting-ready.

    The loss column repeats the epoch's training loss on every row.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "accuracy", "loss", "lr"])
        for m in run.metrics:
            for split_name, acc in (("train", m.train_acc), ("val", m.val_acc),
                                    ("test", m.test_acc)):
                writer.writerow([m.epoch, split_name, f"{acc:.4f}",
                                 f"{m.loss:.6f}", f"{m.lr:.8f}"])
