"""Dataset assembly, training loop, and evaluation reports.

The default split reproduces the published 33-train / 11-test record
grouping. Training runs the fixed-epoch gradient-descent loop with
per-epoch augmentation of training images only; test images are always
evaluated untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInput,
    EmptySet,
    EmptyTrainSet,
    IoFailure,
    LabelMismatch,
    MissingImage,
)
from .neuralnet import Model, backward_batch, bce_loss, forward_batch, sgd_step
from .rasterizer import AugmentParams, augment
from .record_io import Label, load_labels

# Published record grouping: 8 + 25 train, 3 + 8 test.
TRAIN_HEALTHY = ("101", "113", "115", "117", "121", "122", "123", "230")
TEST_HEALTHY = ("103", "112", "234")
TRAIN_UNHEALTHY = (
    "106", "108", "109", "114", "116", "118", "119", "124", "201", "203",
    "205", "207", "208", "209", "214", "215", "219", "220", "221", "222",
    "223", "228", "231", "232", "233",
)
TEST_UNHEALTHY = ("100", "105", "111", "200", "202", "210", "212", "213")

DECISION_THRESHOLD = 0.5  # p >= threshold predicts unhealthy


@dataclass(frozen=True)
class DatasetSplit:
    """Record ids with labels, partitioned into train and test."""

    train: tuple[tuple[str, Label], ...]
    test: tuple[tuple[str, Label], ...]

    def __post_init__(self):
        train_ids = {rid for rid, _ in self.train}
        test_ids = {rid for rid, _ in self.test}
        overlap = train_ids & test_ids
        if overlap:
            raise ValueError(f"records in both train and test: {sorted(overlap)}")

    @property
    def all_records(self) -> tuple[str, ...]:
        return tuple(rid for rid, _ in self.train) + tuple(rid for rid, _ in self.test)


def default_split() -> DatasetSplit:
    """The published train/test grouping of the 44 records."""
    return DatasetSplit(
        train=tuple((rid, Label.HEALTHY) for rid in TRAIN_HEALTHY)
        + tuple((rid, Label.UNHEALTHY) for rid in TRAIN_UNHEALTHY),
        test=tuple((rid, Label.HEALTHY) for rid in TEST_HEALTHY)
        + tuple((rid, Label.UNHEALTHY) for rid in TEST_UNHEALTHY),
    )


@dataclass(frozen=True)
class LabeledImage:
    record_id: str
    image: np.ndarray = field(repr=False)  # uint8 (size, size, 3)
    label: Label


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 175
    learning_rate: float = 0.01
    batch_size: int = 8
    augment: AugmentParams = AugmentParams()
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError(f"bad training config: {self}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float


@dataclass(frozen=True)
class RecordPrediction:
    record_id: str
    label: Label
    probability: float
    predicted: Label

    @property
    def correct(self) -> bool:
        return self.predicted == self.label


@dataclass(frozen=True)
class EvalReport:
    """Per-record outcomes plus confusion counts for one labeled set."""

    rows: tuple[RecordPrediction, ...]
    true_unhealthy: int
    true_healthy: int
    false_unhealthy: int
    false_healthy: int
    accuracy: float
    healthy_accuracy: float | None
    unhealthy_accuracy: float | None


def eval_report_dict(rep: "EvalReport") -> dict:
    """JSON-ready form of an EvalReport."""
    return {
        "rows": [
            {
                "record_id": r.record_id,
                "label": r.label.name,
                "probability": r.probability,
                "predicted": r.predicted.name,
            }
            for r in rep.rows
        ],
        "confusion": {
            "true_unhealthy": rep.true_unhealthy,
            "true_healthy": rep.true_healthy,
            "false_unhealthy": rep.false_unhealthy,
            "false_healthy": rep.false_healthy,
        },
        "accuracy": rep.accuracy,
        "healthy_accuracy": rep.healthy_accuracy,
        "unhealthy_accuracy": rep.unhealthy_accuracy,
    }


@dataclass(frozen=True)
class RunReport:
    """Everything one training/evaluation run produced, reproducibly."""

    seed: int
    config: dict
    train: EvalReport
    test: EvalReport
    summary: dict

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "train": eval_report_dict(self.train),
            "test": eval_report_dict(self.test),
            "summary": self.summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def build_dataset(
    images: dict[str, np.ndarray],
    labels: dict[str, Label] | None = None,
    split: DatasetSplit | None = None,
) -> tuple[list[LabeledImage], list[LabeledImage]]:
    """Assemble (train, test) labeled-image lists for the split.

    Raises LabelMismatch when a split record is missing from the label table
    or carries a different label there, MissingImage when no image exists.
    """
    labels = load_labels() if labels is None else labels
    split = default_split() if split is None else split

    def lookup(pairs) -> list[LabeledImage]:
        out = []
        for rid, label in pairs:
            if rid not in labels:
                raise LabelMismatch(f"record {rid!r} is not in the label table")
            if labels[rid] != label:
                raise LabelMismatch(
                    f"record {rid!r}: split says {Label(label).name}, "
                    f"table says {labels[rid].name}"
                )
            if rid not in images:
                raise MissingImage(f"no image for record {rid!r}")
            out.append(LabeledImage(record_id=rid, image=images[rid], label=label))
        return out

    return lookup(split.train), lookup(split.test)


def _predict_probs(model: Model, images: np.ndarray, chunk: int = 16) -> np.ndarray:
    """Forward pass without retained caches, chunked to bound memory."""
    probs = []
    for start in range(0, images.shape[0], chunk):
        p, _ = forward_batch(model, images[start : start + chunk])
        probs.append(p)
    return np.concatenate(probs)


def _to_input(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float64) / 255.0


def train(
    model: Model,
    train_set: list[LabeledImage],
    config: TrainConfig,
    rng: np.random.Generator | None = None,
    test_set: list[LabeledImage] | None = None,
) -> tuple[Model, list[EpochMetrics]]:
    """Fixed-epoch gradient-descent training loop.

    Per epoch: shuffle, augment each training image, batch, forward/backward,
    update. Train metrics come from the augmented training batches (before
    each update); test metrics from the clean test images. Deterministic for
    a fixed seed/rng.
    """
    if not train_set:
        raise EmptyTrainSet("training set is empty")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))

    train_labels = np.array([float(ex.label) for ex in train_set])
    test_inputs = None
    test_labels = None
    if test_set:
        test_inputs = np.stack([_to_input(ex.image) for ex in test_set])
        test_labels = np.array([float(ex.label) for ex in test_set])

    metrics: list[EpochMetrics] = []
    n = len(train_set)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            batch_imgs = np.stack(
                [
                    _to_input(augment(train_set[i].image, config.augment, rng))
                    for i in batch_idx
                ]
            )
            batch_y = train_labels[batch_idx]
            probs, cache = forward_batch(model, batch_imgs)
            grads = backward_batch(model, cache, batch_y)
            model = sgd_step(model, grads, config.learning_rate)
            loss_sum += bce_loss(probs, batch_y) * batch_y.size
            correct += int(np.sum((probs >= DECISION_THRESHOLD) == (batch_y == 1.0)))

        if test_inputs is not None:
            test_probs = _predict_probs(model, test_inputs)
            test_loss = bce_loss(test_probs, test_labels)
            test_acc = float(
                np.mean((test_probs >= DECISION_THRESHOLD) == (test_labels == 1.0))
            )
        else:
            test_loss = math.nan
            test_acc = math.nan

        metrics.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=loss_sum / n,
                train_accuracy=correct / n,
                test_loss=test_loss,
                test_accuracy=test_acc,
            )
        )

    return model, metrics


def evaluate(model: Model, labeled_set: list[LabeledImage]) -> EvalReport:
    """Per-record probabilities, predictions, confusion counts, accuracies."""
    if not labeled_set:
        raise EmptySet("evaluation set is empty")
    ordered = sorted(labeled_set, key=lambda ex: ex.record_id)
    inputs = np.stack([_to_input(ex.image) for ex in ordered])
    probs = _predict_probs(model, inputs)

    rows = []
    for ex, p in zip(ordered, probs):
        predicted = Label.UNHEALTHY if p >= DECISION_THRESHOLD else Label.HEALTHY
        rows.append(
            RecordPrediction(
                record_id=ex.record_id,
                label=ex.label,
                probability=float(p),
                predicted=predicted,
            )
        )

    tu = sum(1 for r in rows if r.label == Label.UNHEALTHY and r.correct)
    th = sum(1 for r in rows if r.label == Label.HEALTHY and r.correct)
    fu = sum(1 for r in rows if r.label == Label.HEALTHY and not r.correct)
    fh = sum(1 for r in rows if r.label == Label.UNHEALTHY and not r.correct)
    n_healthy = th + fu
    n_unhealthy = tu + fh

    return EvalReport(
        rows=tuple(rows),
        true_unhealthy=tu,
        true_healthy=th,
        false_unhealthy=fu,
        false_healthy=fh,
        accuracy=(tu + th) / len(rows),
        healthy_accuracy=(th / n_healthy) if n_healthy else None,
        unhealthy_accuracy=(tu / n_unhealthy) if n_unhealthy else None,
    )


def accuracy(predictions, labels) -> float:
    """Fraction of matching entries."""
    predictions = list(predictions)
    labels = list(labels)
    if not predictions:
        raise EmptyInput("no predictions to score")
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    return sum(p == l for p, l in zip(predictions, labels)) / len(labels)


def build_report(
    seed: int,
    config: dict,
    train_report: EvalReport,
    test_report: EvalReport,
) -> RunReport:
    """Combine train and test evaluations into the run summary document."""
    return RunReport(
        seed=seed,
        config=config,
        train=train_report,
        test=test_report,
        summary={
            "train_accuracy": train_report.accuracy,
            "test_accuracy": test_report.accuracy,
            "healthy_test_accuracy": test_report.healthy_accuracy,
            "unhealthy_test_accuracy": test_report.unhealthy_accuracy,
        },
    )


def emit_curves(metrics: list[EpochMetrics], path) -> None:
    """Write per-epoch metrics as CSV with 6-decimal fixed precision."""
    try:
        with open(path, "w", newline="") as fh:
            fh.write("epoch,train_loss,train_acc,test_loss,test_acc\n")
            for m in metrics:
                fh.write(
                    f"{m.epoch},{m.train_loss:.6f},{m.train_accuracy:.6f},"
                    f"{m.test_loss:.6f},{m.test_accuracy:.6f}\n"
                )
    except OSError as exc:
        raise IoFailure(f"cannot write metrics to {path}: {exc}") from exc


def read_curves(path) -> list[EpochMetrics]:
    """Read a metrics CSV back (inverse of emit_curves at 1e-6 precision)."""
    metrics = []
    with open(path, newline="") as fh:
        header = fh.readline()
        if header.strip() != "epoch,train_loss,train_acc,test_loss,test_acc":
            raise ValueError(f"unexpected curves header: {header!r}")
        for line in fh:
            epoch, tl, ta, vl, va = line.strip().split(",")
            metrics.append(
                EpochMetrics(
                    epoch=int(epoch),
                    train_loss=float(tl),
                    train_accuracy=float(ta),
                    test_loss=float(vl),
                    test_accuracy=float(va),
                )
            )
    return metrics
