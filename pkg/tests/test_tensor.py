import numpy as np
import pytest

from fercnn.tensor import (NonFiniteError, Rng, elementwise, matmul, reduce,
                           sample_normal, tensor_create)


def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += float(a[i, p]) * float(b[p, j])
    return out


class TestCreate:
    def test_zero_fill(self):
        t = tensor_create([2, 3], fill=0.0)
        assert t.shape == (2, 3)
        assert (t == 0).all()

    def test_explicit_values(self):
        t = tensor_create([1], values=[5.0])
        assert t.shape == (1,)
        assert t[0] == 5.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="3 values"):
            tensor_create([2, 2], values=[1.0, 2.0, 3.0])

    def test_bad_dimensions(self):
        with pytest.raises(ValueError):
            tensor_create([2, 0])
        with pytest.raises(ValueError):
            tensor_create([])

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteError):
            tensor_create([2], values=[1.0, np.nan])


class TestElementwise:
    def test_add_identity(self):
        x = tensor_create([2, 3], values=np.arange(6, dtype=np.float32))
        out = elementwise("add", x, np.zeros_like(x))
        assert (out == x).all()

    def test_scale(self):
        out = elementwise("scale", tensor_create([3], values=[1, 2, 3]), 2)
        assert out.tolist() == [2.0, 4.0, 6.0]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            elementwise("add", np.zeros((2, 3)), np.zeros((3, 2)))

    def test_map_unary(self):
        out = elementwise("map", np.array([1.0, 4.0]), np.sqrt)
        assert out.tolist() == [1.0, 2.0]

    def test_same_order_is_bit_identical(self):
        rng = Rng(3)
        a = rng.normal([4, 4])
        b = rng.normal([4, 4])
        first = elementwise("add", a, b)
        second = elementwise("add", a, b)
        assert (first == second).all()


class TestMatmul:
    def test_identity(self):
        a = np.arange(6, dtype=np.float32).reshape(2, 3)
        out = matmul(a, np.eye(3, dtype=np.float32))
        assert np.array_equal(out, a)

    def test_known_product(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        expected = matmul_oracle(a, b)
        assert np.array_equal(expected, np.array([[19.0, 22.0], [43.0, 50.0]]))
        assert np.allclose(matmul(a, b), expected)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="inner dimensions"):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_rank_check(self):
        with pytest.raises(ValueError, match="rank-2"):
            matmul(np.zeros(3), np.zeros((3, 2)))

    def test_matches_oracle_on_random_shapes(self):
        for seed in range(10):
            rng = Rng(seed)
            m, k, n = (int(v) for v in rng.integers(1, 9, 3))
            a = rng.normal([m, k], dtype=np.float32)
            b = rng.normal([k, n], dtype=np.float32)
            got = matmul(a, b)
            want = matmul_oracle(a, b)
            denom = np.maximum(np.abs(want), 1.0)
            assert (np.abs(got - want) / denom).max() <= 1e-6


class TestReduce:
    def test_sum_zeros(self):
        assert reduce("sum", np.zeros((3, 3))) == 0.0

    def test_argmax(self):
        assert reduce("argmax", np.array([0.1, 0.7, 0.2])) == 1

    def test_argmax_tie_breaks_low(self):
        assert reduce("argmax", np.array([0.5, 0.5])) == 0

    def test_axis_out_of_range(self):
        with pytest.raises(ValueError, match="axis"):
            reduce("sum", np.zeros((2, 2)), axis=2)

    def test_argmax_empty(self):
        with pytest.raises(ValueError, match="empty"):
            reduce("argmax", np.zeros(0))

    def test_mean_axis(self):
        out = reduce("mean", np.array([[1.0, 3.0], [5.0, 7.0]]), axis=0)
        assert out.tolist() == [3.0, 5.0]

    def test_argmax_shift_and_scale_invariance(self):
        for seed in range(20):
            x = Rng(seed).normal([17])
            base = reduce("argmax", x)
            assert reduce("argmax", x + 3.25) == base
            assert reduce("argmax", x * 1.75) == base


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(42).normal([50])
        b = Rng(42).normal([50])
        assert np.array_equal(a, b)

    def test_child_streams_are_order_independent(self):
        r1 = Rng(7)
        first = r1.stream("augment", 3, 11).normal([4])
        r2 = Rng(7)
        r2.normal([100])  # unrelated draws must not shift the child stream
        second = r2.stream("augment", 3, 11).normal([4])
        assert np.array_equal(first, second)

    def test_distinct_streams_differ(self):
        a = Rng(7).stream("a").normal([8])
        b = Rng(7).stream("b").normal([8])
        assert not np.array_equal(a, b)


class TestSampleNormal:
    def test_zero_std_degenerates_to_mean(self):
        out = sample_normal(Rng(0), [10], mean=2.5, std=0.0)
        assert (out == 2.5).all()

    def test_negative_std_rejected(self):
        with pytest.raises(ValueError, match="std"):
            sample_normal(Rng(0), [3], std=-1.0)

    def test_determinism(self):
        assert np.array_equal(sample_normal(Rng(5), [64]), sample_normal(Rng(5), [64]))

    def test_moments(self):
        draws = sample_normal(Rng(1234), [100_000], mean=0.0, std=1.0)
        assert abs(float(draws.mean())) <= 0.02
        assert abs(float(draws.std()) - 1.0) <= 0.02


def test_invariant_size_matches_shape():
    for seed in range(5):
        shape = [int(v) for v in Rng(seed).integers(1, 6, 3)]
        t = tensor_create(shape, fill=1.0)
        assert t.size == np.prod(shape)
