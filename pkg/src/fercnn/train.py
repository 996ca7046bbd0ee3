"""Training loop with class-weighted loss, early stopping and best-model
retention, plus the evaluation suite (accuracy, confusion matrix, per-class
precision/recall) and the epoch-history CSV.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentPolicy, augment
from .data import NUM_CLASSES, DatasetSplit, FerData, compute_class_weights, stratified_subset
from .layers import Model
from .optim import (ClassWeights, OptimizerConfig, OptimizerState,
                    optimizer_step, weighted_softmax_cross_entropy)
from .tensor import NonFiniteError, Rng

MIN_IMPROVEMENT = 1e-6


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    patience: int = 10
    monitor: str = "val_loss"
    seed: int = 0
    subset_fraction: float = 1.0
    augment_policy: AugmentPolicy | None = field(default_factory=AugmentPolicy)
    architecture: str = "fer-ref-v1"
    class_weights: str = "balanced"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be >= 1")
        if self.patience > self.epochs:
            raise ValueError("patience must be <= epochs")
        if self.monitor not in ("val_loss", "val_accuracy"):
            raise ValueError(f"monitor must be val_loss or val_accuracy, got {self.monitor!r}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ValueError("subset_fraction must be in (0,1]")
        if self.class_weights not in ("balanced", "none"):
            raise ValueError("class_weights must be 'balanced' or 'none'")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    seconds: float


@dataclass
class Metrics:
    accuracy: float
    precision: list  # per class; None where no sample was predicted as it
    recall: list  # per class; None where the class has no true samples
    confusion: np.ndarray  # [7,7] int64, rows = true class, cols = predicted


@dataclass
class TrainResult:
    model: Model  # best under the monitored metric, not the last epoch
    history: list[EpochRecord]
    best_epoch: int
    stopped_epoch: int
    optimizer_steps: int
    best_state_by_loss: dict
    best_state_by_accuracy: dict


def early_stop_update(best: float | None, current: float, stale_epochs: int,
                      patience: int, direction: str):
    """One early-stopping decision. Improvement means strictly better than
    `best` by more than 1e-6; `patience` stale epochs in a row trigger stop.
    Returns (decision, best, stale_epochs)."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if direction not in ("min", "max"):
        raise ValueError("direction must be 'min' or 'max'")
    if best is None:
        improved = True
    elif direction == "min":
        improved = current < best - MIN_IMPROVEMENT
    else:
        improved = current > best + MIN_IMPROVEMENT
    if improved:
        return "continue", current, 0
    stale_epochs += 1
    return ("stop" if stale_epochs >= patience else "continue"), best, stale_epochs


class EarlyStopper:
    def __init__(self, patience: int, direction: str):
        self.patience = patience
        self.direction = direction
        self.best: float | None = None
        self.stale = 0

    def update(self, current: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        prev_best = self.best
        decision, self.best, self.stale = early_stop_update(
            self.best, current, self.stale, self.patience, self.direction)
        improved = self.best != prev_best or prev_best is None
        return improved, decision == "stop"


def confusion_matrix(labels, predictions, n_classes: int = NUM_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(np.asarray(labels), np.asarray(predictions)):
        cm[t, p] += 1
    return cm


def metrics_from_confusion(cm: np.ndarray) -> Metrics:
    total = int(cm.sum())
    accuracy = float(np.trace(cm) / total) if total else 0.0
    precision, recall = [], []
    for c in range(cm.shape[0]):
        pred_c = int(cm[:, c].sum())
        true_c = int(cm[c, :].sum())
        precision.append(float(cm[c, c] / pred_c) if pred_c else None)
        recall.append(float(cm[c, c] / true_c) if true_c else None)
    return Metrics(accuracy=accuracy, precision=precision, recall=recall, confusion=cm)


def _forward_in_batches(model: Model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    probs = []
    for start in range(0, len(x), batch_size):
        p, _ = model.forward(x[start : start + batch_size], mode="infer")
        probs.append(p)
    return np.concatenate(probs, axis=0)


def evaluate(model: Model, split: DatasetSplit, batch_size: int = 256) -> Metrics:
    """Infer-mode metrics over a split: argmax predictions, accuracy,
    confusion matrix, per-class precision/recall."""
    x, y = split.as_arrays()
    probs = _forward_in_batches(model, x, batch_size)
    preds = probs.argmax(axis=1)
    return metrics_from_confusion(confusion_matrix(y, preds))


def _weighted_eval_loss(model: Model, split: DatasetSplit, weights: ClassWeights | None,
                        batch_size: int = 256) -> tuple[float, float]:
    """(loss, accuracy) on a split, in infer mode, via the fused loss over
    pre-softmax logits."""
    x, y = split.as_arrays()
    total_loss = 0.0
    correct = 0
    for start in range(0, len(x), batch_size):
        xb, yb = x[start : start + batch_size], y[start : start + batch_size]
        logits = model.forward_logits(xb)
        loss, _ = weighted_softmax_cross_entropy(logits, yb, weights)
        total_loss += loss * len(yb)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return total_loss / len(x), correct / len(x)


def train(model: Model, data: FerData, config: TrainConfig) -> TrainResult:
    """Runs the epoch loop on the Training split with on-the-fly augmentation
    and class-weighted loss, validating on PublicTest after every epoch. The
    best model under `config.monitor` is retained and restored before
    returning; early stopping halts after `patience` epochs without
    improvement."""
    if not data.training.samples or not data.public_test.samples:
        raise ValueError("training and validation splits must be nonempty")

    root = Rng(config.seed)
    train_split = data.training
    val_split = data.public_test
    if config.subset_fraction < 1.0:
        train_split = stratified_subset(train_split, config.subset_fraction, config.seed)
        val_split = stratified_subset(val_split, config.subset_fraction, config.seed)

    weights = None
    if config.class_weights == "balanced":
        counts = train_split.class_counts()
        if (counts > 0).all():
            weights = compute_class_weights(counts)

    x_train, y_train = train_split.as_arrays()
    n = len(x_train)
    state = OptimizerState()
    key_map = []
    params = {}
    for key, layer, name in model.trainable():
        key_map.append((key, int(key.split(".", 1)[0]), name))
        params[key] = layer.params[name]

    monitor_stopper = EarlyStopper(config.patience,
                                   "min" if config.monitor == "val_loss" else "max")
    best_val_loss = None
    best_val_acc = None
    history: list[EpochRecord] = []
    best_state_by_loss: dict = {}
    best_state_by_accuracy: dict = {}
    best_epoch = 0

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = root.stream("shuffle", epoch).permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            xb = x_train[idx]
            if config.augment_policy is not None:
                xb = np.stack([
                    augment(x_train[i], config.augment_policy,
                            root.stream("augment", epoch, int(i)))
                    for i in idx
                ])
            yb = y_train[idx]
            try:
                probs, caches = model.forward(xb, mode="train",
                                              rng=root.stream("batch", epoch, step))
                logits = caches[-1].logits
                loss, dlogits = weighted_softmax_cross_entropy(logits, yb, weights)
                if not np.isfinite(loss):
                    raise NonFiniteError("non-finite loss")
                grads_by_layer, _ = model.backward(caches, dlogits)
                grads = {key: grads_by_layer[i][name] for key, i, name in key_map}
                optimizer_step(config.optimizer, state, params, grads)
            except NonFiniteError as e:
                raise NonFiniteError(
                    f"training diverged at epoch {epoch}, batch {step}: {e}") from None
            epoch_loss += loss * len(yb)
            epoch_correct += int((probs.argmax(axis=1) == yb).sum())

        val_loss, val_acc = _weighted_eval_loss(model, val_split, weights)
        history.append(EpochRecord(
            epoch=epoch,
            train_loss=epoch_loss / n,
            train_accuracy=epoch_correct / n,
            val_loss=val_loss,
            val_accuracy=val_acc,
            seconds=time.perf_counter() - t0,
        ))

        if best_val_loss is None or val_loss < best_val_loss - MIN_IMPROVEMENT:
            best_val_loss = val_loss
            best_state_by_loss = model.state()
            if config.monitor == "val_loss":
                best_epoch = epoch
        if best_val_acc is None or val_acc > best_val_acc + MIN_IMPROVEMENT:
            best_val_acc = val_acc
            best_state_by_accuracy = model.state()
            if config.monitor == "val_accuracy":
                best_epoch = epoch
        monitored = val_loss if config.monitor == "val_loss" else val_acc
        _, should_stop = monitor_stopper.update(monitored)
        if should_stop:
            break

    best_state = best_state_by_loss if config.monitor == "val_loss" else best_state_by_accuracy
    if best_state:
        model.load_state(best_state)
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        stopped_epoch=history[-1].epoch if history else 0,
        optimizer_steps=state.t,
        best_state_by_loss=best_state_by_loss or model.state(),
        best_state_by_accuracy=best_state_by_accuracy or model.state(),
    )


def history_to_csv(history: list[EpochRecord], path) -> None:
    """Plot-ready per-epoch records; floats keep 10 significant digits."""
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc,seconds"]
    for r in history:
        lines.append(
            f"{r.epoch},{r.train_loss:.10g},{r.train_accuracy:.10g},"
            f"{r.val_loss:.10g},{r.val_accuracy:.10g},{r.seconds:.3f}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def confusion_to_csv(cm: np.ndarray, path, class_names) -> None:
    """7x7 counts with a header row/column of class names."""
    lines = ["," + ",".join(class_names)]
    for name, row in zip(class_names, cm):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
