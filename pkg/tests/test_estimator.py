import numpy as np
import pytest
from sklearn.base import clone

from helpers import pattern_image

from fercnn.estimator import FacialExpressionCNN
from fercnn.tensor import Rng
from fercnn.validation import as_image_batch, as_label_array, decode_pixel_list


def make_dataset(per_class=8, seed=0):
    xs, ys = [], []
    for label in range(7):
        for i in range(per_class):
            xs.append(pattern_image(label, Rng(seed).stream("ds", label, i)))
            ys.append(label)
    return np.stack(xs), np.array(ys)


class TestValidationHelpers:
    def test_flat_rows_accepted(self):
        x = np.zeros((3, 2304), dtype=np.uint8)
        out = as_image_batch(x)
        assert out.shape == (3, 1, 48, 48)
        assert out.dtype == np.float32

    def test_integer_scaling(self):
        x = np.full((1, 48, 48), 255, dtype=np.int64)
        assert (as_image_batch(x) == 1.0).all()

    def test_float_range_enforced(self):
        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            as_image_batch(np.full((1, 2304), 2.0))

    def test_wrong_shape(self):
        with pytest.raises(ValueError, match="expected images"):
            as_image_batch(np.zeros((3, 100)))

    def test_labels_validated(self):
        assert as_label_array([0, 6]).tolist() == [0, 6]
        with pytest.raises(ValueError):
            as_label_array([0, 7])
        with pytest.raises(ValueError):
            as_label_array([0.5])

    def test_decode_pixel_list(self):
        out = decode_pixel_list([0] * 2304)
        assert out.shape == (1, 1, 48, 48)
        with pytest.raises(ValueError, match="2304"):
            decode_pixel_list([0] * 2303)
        with pytest.raises(ValueError, match="0..255"):
            decode_pixel_list([300] + [0] * 2303)


class TestSklearnContract:
    def test_get_params_round_trip(self):
        est = FacialExpressionCNN(epochs=5, seed=3)
        params = est.get_params()
        assert params["epochs"] == 5
        assert params["seed"] == 3
        est.set_params(epochs=9)
        assert est.epochs == 9

    def test_clone_preserves_params(self):
        est = FacialExpressionCNN(epochs=4, learning_rate=0.01, optimizer="adam")
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            FacialExpressionCNN().predict(np.zeros((1, 2304), dtype=np.uint8))


class TestFitPredict:
    @pytest.fixture(scope="class")
    def fitted(self):
        x, y = make_dataset(per_class=8)
        est = FacialExpressionCNN(epochs=12, batch_size=28, patience=12,
                                  augment=False, seed=5)
        return est.fit(x, y), x, y

    def test_fit_learns_the_patterns(self, fitted):
        est, x, y = fitted
        assert est.score(x, y) >= 0.6

    def test_predict_proba_rows_sum_to_one(self, fitted):
        est, x, _ = fitted
        probs = est.predict_proba(x[:5])
        assert probs.shape == (5, 7)
        assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-6

    def test_predict_matches_argmax(self, fitted):
        est, x, _ = fitted
        assert np.array_equal(est.predict(x[:5]), est.predict_proba(x[:5]).argmax(axis=1))

    def test_fitted_attributes(self, fitted):
        est, _, _ = fitted
        assert est.classes_.tolist() == list(range(7))
        assert len(est.history_) >= 1
        assert est.n_features_in_ == 2304

    def test_explicit_validation_data(self):
        x, y = make_dataset(per_class=4, seed=9)
        xv, yv = make_dataset(per_class=2, seed=10)
        est = FacialExpressionCNN(epochs=2, patience=2, augment=False, seed=1)
        est.fit(x, y, validation_data=(xv, yv))
        assert len(est.history_) == 2

    def test_accepts_flat_uint8_rows(self):
        x, y = make_dataset(per_class=3, seed=2)
        flat = np.rint(x.reshape(len(x), -1) * 255).astype(np.uint8)
        est = FacialExpressionCNN(epochs=1, patience=1, augment=False, seed=2)
        est.fit(flat, y)
        preds = est.predict(flat[:3])
        assert preds.shape == (3,)
