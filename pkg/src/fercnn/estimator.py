"""scikit-learn compatible classifier wrapping the CNN training engine, so
the model drops into pipelines, grid search and cross-validation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .augment import AugmentPolicy
from .data import EMOTIONS, DatasetSplit, FerData, NUM_CLASSES, Sample
from .optim import OptimizerConfig
from .presets import build_model
from .tensor import Rng
from .train import TrainConfig, train
from .validation import as_image_batch, as_label_array


def _split_from_arrays(x: np.ndarray, y: np.ndarray, usage: str) -> DatasetSplit:
    return DatasetSplit([Sample(pixels=xi, label=int(yi)) for xi, yi in zip(x, y)], usage)


class FacialExpressionCNN(BaseEstimator, ClassifierMixin):
    """Seven-class facial expression classifier trained from scratch.

    Parameters mirror the training configuration; `fit(X, y)` accepts images
    shaped [n, 2304], [n, 48, 48] or [n, 1, 48, 48] (ints 0..255 or floats
    in [0, 1]) with labels 0..6. A validation set can be passed explicitly,
    otherwise a stratified tail fraction of the training data is held out
    for early stopping.
    """

    def __init__(self, preset="fer-tiny", epochs=30, batch_size=64,
                 learning_rate=1e-3, optimizer="nadam", beta1=0.9, beta2=0.999,
                 epsilon=1e-8, momentum_coeff=0.9, patience=10,
                 monitor="val_loss", augment=True, class_weights="balanced",
                 validation_fraction=0.15, seed=0):
        self.preset = preset
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.momentum_coeff = momentum_coeff
        self.patience = patience
        self.monitor = monitor
        self.augment = augment
        self.class_weights = class_weights
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _holdout(self, x, y, rng: Rng):
        """Stratified split into (train, validation) index arrays."""
        val_idx = []
        for label in range(NUM_CLASSES):
            members = np.flatnonzero(y == label)
            if len(members) == 0:
                continue
            take = max(1, int(round(self.validation_fraction * len(members))))
            take = min(take, len(members) - 1) if len(members) > 1 else 0
            if take:
                picked = rng.stream("holdout", label).permutation(len(members))[:take]
                val_idx.extend(members[picked])
        val_idx = np.sort(np.asarray(val_idx, dtype=np.int64))
        mask = np.ones(len(y), dtype=bool)
        mask[val_idx] = False
        return np.flatnonzero(mask), val_idx

    def fit(self, X, y, validation_data=None):
        x = as_image_batch(X)
        y = as_label_array(y, n=len(x))
        rng = Rng(int(self.seed))

        if validation_data is not None:
            xv = as_image_batch(validation_data[0])
            yv = as_label_array(validation_data[1], n=len(xv))
            xt, yt = x, y
        else:
            if not 0.0 < self.validation_fraction < 1.0:
                raise ValueError("validation_fraction must be in (0,1) when no "
                                 "validation_data is given")
            train_idx, val_idx = self._holdout(x, y, rng)
            if len(val_idx) == 0 or len(train_idx) == 0:
                raise ValueError("not enough samples to hold out a validation set")
            xt, yt = x[train_idx], y[train_idx]
            xv, yv = x[val_idx], y[val_idx]

        data = FerData(
            training=_split_from_arrays(xt, yt, "Training"),
            public_test=_split_from_arrays(xv, yv, "PublicTest"),
            private_test=_split_from_arrays(xv, yv, "PrivateTest"),
        )
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=OptimizerConfig(
                kind=self.optimizer, learning_rate=self.learning_rate,
                beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon,
                momentum_coeff=self.momentum_coeff,
            ),
            patience=min(self.patience, self.epochs),
            monitor=self.monitor,
            seed=int(self.seed),
            augment_policy=AugmentPolicy() if self.augment else None,
            architecture=self.preset,
            class_weights=self.class_weights,
        )
        model = build_model(self.preset, rng.stream("init"))
        result = train(model, data, config)

        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.classes_ = np.arange(NUM_CLASSES)
        self.class_names_ = list(EMOTIONS)
        self.n_features_in_ = x.shape[1] * x.shape[2] * x.shape[3]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this FacialExpressionCNN instance is not fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        x = as_image_batch(X)
        probs = []
        for start in range(0, len(x), 256):
            p, _ = self.model_.forward(x[start : start + 256], mode="infer")
            probs.append(p)
        return np.concatenate(probs, axis=0)

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
