import dataclasses
import math

import numpy as np
import pytest

from helpers import write_synthetic_csv

from fercnn.data import load_fer2013
from fercnn.optim import OptimizerConfig
from fercnn.presets import build_model
from fercnn.tensor import NonFiniteError, Rng
from fercnn.train import (EarlyStopper, EpochRecord, TrainConfig,
                          confusion_matrix, confusion_to_csv,
                          early_stop_update, evaluate, history_to_csv,
                          metrics_from_confusion, train)


class TestEarlyStopUpdate:
    def test_strictly_improving_never_stops(self):
        best, stale = None, 0
        for value in np.linspace(1.0, 0.1, 50):
            decision, best, stale = early_stop_update(best, float(value), stale,
                                                      patience=3, direction="min")
            assert decision == "continue"
            assert stale == 0

    def test_flat_sequence_stops_after_patience(self):
        best, stale = None, 0
        decisions = []
        for _ in range(5):
            decision, best, stale = early_stop_update(best, 0.5, stale,
                                                      patience=3, direction="min")
            decisions.append(decision)
        # first update sets the baseline; three stale updates then trigger
        assert decisions == ["continue", "continue", "continue", "stop", "stop"]

    def test_tiny_improvement_counts_as_stale(self):
        decision, best, stale = early_stop_update(1.0, 1.0 - 1e-7, 0,
                                                  patience=1, direction="min")
        assert decision == "stop"
        assert best == 1.0
        assert stale == 1

    def test_max_direction(self):
        decision, best, stale = early_stop_update(0.5, 0.7, 2, patience=3,
                                                  direction="max")
        assert (decision, best, stale) == ("continue", 0.7, 0)

    def test_overfit_curve_scenario(self):
        # monitored loss improves through epoch 40, then goes flat: with
        # patience 10 training stops at epoch 50 and the best index is 40
        values = [1.0 / epoch for epoch in range(1, 41)] + [0.5] * 60
        stopper = EarlyStopper(patience=10, direction="min")
        best_epoch = 0
        stopped_at = None
        for epoch, value in enumerate(values, start=1):
            improved, should_stop = stopper.update(value)
            if improved:
                best_epoch = epoch
            if should_stop:
                stopped_at = epoch
                break
        assert stopped_at == 50
        assert best_epoch == 40


class TestMetrics:
    def test_hand_tabulated_example(self):
        cm = confusion_matrix([0, 0, 1], [0, 1, 1])
        metrics = metrics_from_confusion(cm)
        assert metrics.accuracy == pytest.approx(2 / 3)
        assert metrics.recall[0] == pytest.approx(1 / 2)
        assert metrics.recall[1] == pytest.approx(1.0)
        assert metrics.precision[1] == pytest.approx(1 / 2)

    def test_accuracy_is_trace_over_total(self):
        rng = Rng(3)
        labels = [int(v) for v in rng.integers(0, 7, 200)]
        preds = [int(v) for v in rng.integers(0, 7, 200)]
        cm = confusion_matrix(labels, preds)
        assert cm.sum() == 200
        metrics = metrics_from_confusion(cm)
        assert metrics.accuracy == np.trace(cm) / 200

    def test_never_predicted_class_has_undefined_precision(self):
        cm = confusion_matrix([0, 1, 2], [0, 0, 0])
        metrics = metrics_from_confusion(cm)
        assert metrics.precision[1] is None
        assert metrics.precision[0] == pytest.approx(1 / 3)
        assert metrics.recall[3] is None  # no true samples either

    def test_perfect_classifier(self, tmp_path):
        csv = tmp_path / "synth.csv"
        write_synthetic_csv(csv, {"PrivateTest": [2, 2, 2, 2, 2, 2, 2]}, seed=4)
        split = load_fer2013(csv).private_test

        class OneHotOracle:
            """Stub model whose prediction always equals the true label."""

            def __init__(self, labels):
                self.labels = list(labels)
                self.cursor = 0

            def forward(self, x, mode="infer", rng=None):
                take = self.labels[self.cursor : self.cursor + len(x)]
                self.cursor += len(x)
                probs = np.zeros((len(x), 7), dtype=np.float32)
                probs[np.arange(len(x)), take] = 1.0
                return probs, None

        metrics = evaluate(OneHotOracle([s.label for s in split.samples]), split)
        assert metrics.accuracy == 1.0
        assert np.array_equal(np.diag(np.diag(metrics.confusion)), metrics.confusion)

    def test_constant_classifier_accuracy_is_class_share(self, tmp_path):
        csv = tmp_path / "synth.csv"
        counts = [5, 1, 5, 9, 6, 4, 6]
        write_synthetic_csv(csv, {"PrivateTest": counts}, seed=5)
        split = load_fer2013(csv).private_test

        class AlwaysHappy:
            def forward(self, x, mode="infer", rng=None):
                probs = np.zeros((len(x), 7), dtype=np.float32)
                probs[:, 3] = 1.0
                return probs, None

        metrics = evaluate(AlwaysHappy(), split)
        assert metrics.accuracy == pytest.approx(counts[3] / sum(counts))


class TestHistoryCsv:
    def test_empty_history_writes_header_only(self, tmp_path):
        path = tmp_path / "h.csv"
        history_to_csv([], path)
        assert path.read_text() == "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n"

    def test_two_records_three_lines(self, tmp_path):
        path = tmp_path / "h.csv"
        history = [EpochRecord(1, 1.9, 0.2, 1.8, 0.25, 3.5),
                   EpochRecord(2, 1.5, 0.4, 1.6, 0.35, 3.4)]
        history_to_csv(history, path)
        assert len(path.read_text().splitlines()) == 3

    def test_round_trip_preserves_six_significant_digits(self, tmp_path):
        path = tmp_path / "h.csv"
        record = EpochRecord(7, 1.2345678, 0.87654321, 0.98765432, 0.12345678, 2.0)
        history_to_csv([record], path)
        row = path.read_text().splitlines()[1].split(",")
        for got, want in zip(row[1:5], (record.train_loss, record.train_accuracy,
                                        record.val_loss, record.val_accuracy)):
            assert float(got) == pytest.approx(want, rel=1e-6)

    def test_confusion_csv_layout(self, tmp_path):
        path = tmp_path / "cm.csv"
        cm = np.arange(49).reshape(7, 7)
        confusion_to_csv(cm, path, ("a", "b", "c", "d", "e", "f", "g"))
        lines = path.read_text().splitlines()
        assert lines[0] == ",a,b,c,d,e,f,g"
        assert lines[1] == "a,0,1,2,3,4,5,6"
        assert len(lines) == 8


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    csv = tmp_path_factory.mktemp("train") / "synth.csv"
    write_synthetic_csv(csv, {"Training": [6, 6, 6, 6, 6, 6, 6],
                              "PublicTest": [2, 2, 2, 2, 2, 2, 2],
                              "PrivateTest": [2, 2, 2, 2, 2, 2, 2]}, seed=11)
    return load_fer2013(csv)


def tiny_config(**overrides):
    defaults = dict(
        epochs=3,
        batch_size=16,
        optimizer=OptimizerConfig(kind="nadam"),
        patience=3,
        monitor="val_loss",
        seed=7,
        augment_policy=None,
        architecture="fer-tiny",
        class_weights="balanced",
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestTrainLoop:
    def test_one_step_per_batch(self, tiny_data):
        model = build_model("fer-tiny", Rng(7).stream("init"))
        result = train(model, tiny_data, tiny_config())
        n = len(tiny_data.training)
        assert result.optimizer_steps == 3 * math.ceil(n / 16)
        assert [r.epoch for r in result.history] == [1, 2, 3]

    def test_histories_are_identical_for_identical_configs(self, tiny_data):
        histories = []
        for _ in range(2):
            model = build_model("fer-tiny", Rng(7).stream("init"))
            result = train(model, tiny_data, tiny_config(
                augment_policy=None, epochs=2, patience=2))
            histories.append(result.history)
        a, b = histories
        for ra, rb in zip(a, b):
            assert dataclasses.replace(ra, seconds=0.0) == dataclasses.replace(rb, seconds=0.0)

    def test_best_model_is_restored_not_last(self, tiny_data):
        model = build_model("fer-tiny", Rng(7).stream("init"))
        result = train(model, tiny_data, tiny_config(epochs=4, patience=4))
        best = min(result.history, key=lambda r: r.val_loss)
        assert result.best_epoch == best.epoch
        restored = result.model.state()
        snapshot = result.best_state_by_loss
        assert set(restored) == set(snapshot)
        for key in restored:
            assert np.array_equal(restored[key], snapshot[key])

    def test_training_reduces_loss_below_uniform(self, tiny_data):
        model = build_model("fer-tiny", Rng(7).stream("init"))
        result = train(model, tiny_data, tiny_config(epochs=5, patience=5))
        assert result.history[-1].train_loss < math.log(7.0)

    def test_divergence_aborts_with_location(self, tiny_data):
        model = build_model("fer-tiny", Rng(7).stream("init"))
        config = tiny_config(optimizer=OptimizerConfig(kind="sgd", learning_rate=1e12))
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError, match="epoch"):
            train(model, tiny_data, config)

    def test_subset_fraction_shrinks_training(self, tiny_data):
        model = build_model("fer-tiny", Rng(7).stream("init"))
        result = train(model, tiny_data, tiny_config(subset_fraction=0.5,
                                                     epochs=1, patience=1))
        # ceil(0.5 * 6) = 3 per class -> 21 samples -> 2 batches of 16
        assert result.optimizer_steps == 2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            tiny_config(patience=99)  # patience > epochs
        with pytest.raises(ValueError):
            tiny_config(monitor="loss")
        with pytest.raises(ValueError):
            tiny_config(subset_fraction=0.0)
