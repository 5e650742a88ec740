import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samplewise_rnnt.errors import InvalidShapeError, OutOfMemoryError
from samplewise_rnnt.tensor import (
    AllocationTracker,
    Tensor,
    alloc,
    crop,
    logsumexp_last,
    matmul,
    nbytes_for,
    use_tracker,
)


class TestAlloc:
    def test_f32_zeros_and_bytes(self, tracker):
        t = alloc([2, 3], "f32")
        assert t.shape == (2, 3)
        assert np.all(t.data == 0)
        assert tracker.live_bytes == 24

    def test_f64_single(self, tracker):
        t = alloc([1, 1, 1, 1], "f64")
        assert t.data.size == 1 and t.data.item() == 0.0
        assert tracker.live_bytes == 8

    def test_large_shape_arithmetic_only(self):
        assert nbytes_for([16, 500, 101, 4096], "f32") == 13_238_272_000

    @pytest.mark.parametrize("shape", [[0, 3], [2, 0], [], [1, 1, 1, 1, 1]])
    def test_invalid_shapes(self, tracker, shape):
        with pytest.raises(InvalidShapeError):
            alloc(shape)
        assert tracker.live_bytes == 0

    def test_free_refunds_and_is_idempotent(self, tracker):
        t = alloc([4, 5], "f64")
        t.free()
        t.free()
        assert tracker.live_bytes == 0
        assert tracker.peak_bytes == 160

    def test_garbage_collection_refunds(self, tracker):
        alloc([10], "f32")
        assert tracker.live_bytes == 0

    def test_reset_sets_peak_to_live(self, tracker):
        a = alloc([100], "f32")
        b = alloc([50], "f32")
        b.free()
        assert tracker.peak_bytes == 600
        tracker.reset()
        assert tracker.peak_bytes == tracker.live_bytes == 400
        del a

    def test_ceiling_raises_with_name_and_size(self):
        tr = AllocationTracker(ceiling_bytes=100)
        with use_tracker(tr):
            keep = alloc([20], "f32", name="a")
            with pytest.raises(OutOfMemoryError) as info:
                alloc([10], "f64", name="big")
        assert info.value.name == "big"
        assert info.value.nbytes == 80
        assert tr.live_bytes == 80
        del keep

    def test_select_is_uncharged_view(self, tracker):
        t = alloc([3, 4], "f32")
        row = t.select(1)
        assert not row.owned
        row.data[:] = 7
        assert np.all(t.data[1] == 7)
        assert tracker.live_bytes == 48


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["alloc", "free", "reset"]),
                          st.lists(st.integers(1, 5), min_size=1, max_size=4),
                          st.sampled_from(["f32", "f64"])), max_size=30))
def test_tracker_balance_and_peak(ops):
    tr = AllocationTracker()
    registry = []
    last_peak = 0
    with use_tracker(tr):
        for op, shape, prec in ops:
            if op == "alloc":
                registry.append(alloc(shape, prec))
            elif op == "free" and registry:
                registry.pop(0).free()
            elif op == "reset":
                tr.reset()
                last_peak = tr.peak_bytes
            assert tr.live_bytes == sum(t.nbytes for t in registry)
            assert tr.peak_bytes >= tr.live_bytes
            assert tr.peak_bytes >= last_peak
            last_peak = tr.peak_bytes


class TestMatmul:
    def test_identity(self, tracker):
        a = Tensor.from_array([[1.0, 0.0], [0.0, 1.0]], "f64")
        b = Tensor.from_array([[5.0, 6.0], [7.0, 8.0]], "f64")
        assert np.array_equal(matmul(a, b).data, [[5, 6], [7, 8]])

    def test_dot(self, tracker):
        a = Tensor.from_array([[1.0, 2.0]], "f64")
        b = Tensor.from_array([[3.0], [4.0]], "f64")
        assert matmul(a, b).data.tolist() == [[11.0]]

    def test_against_scalar_loop(self, tracker, rng):
        A, B = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        expected = [[math.fsum(A[i, k] * B[k, j] for k in range(4)) for j in range(2)] for i in range(3)]
        out = matmul(Tensor.from_array(A, "f64"), Tensor.from_array(B, "f64"))
        np.testing.assert_allclose(out.data, expected, rtol=1e-14, atol=1e-15)

    def test_shape_mismatch(self, tracker):
        with pytest.raises(InvalidShapeError):
            matmul(alloc([2, 3]), alloc([2, 3]))

    def test_associativity(self, tracker, rng):
        A, B, C = (Tensor.from_array(rng.uniform(-1, 1, size=(8, 8)), "f64") for _ in range(3))
        left = matmul(matmul(A, B), C).data
        right = matmul(A, matmul(B, C)).data
        assert np.abs(left - right).max() < 1e-9


class TestLogsumexp:
    def test_uniform(self, tracker):
        out = logsumexp_last(Tensor.from_array([0.0, 0.0], "f64"))
        assert out.data[0] == pytest.approx(0.693147, abs=1e-6)

    def test_no_overflow(self, tracker):
        out = logsumexp_last(Tensor.from_array([1000.0, 1000.0], "f64"))
        assert out.data[0] == pytest.approx(1000 + math.log(2), rel=1e-15)

    def test_against_extended_precision(self, tracker):
        x = [0.3, -1.2, 2.5]
        mpmath.mp.dps = 50
        expected = float(mpmath.log(sum(mpmath.exp(mpmath.mpf(v)) for v in x)))
        out = logsumexp_last(Tensor.from_array(x, "f64"))
        assert out.data[0] == pytest.approx(expected, rel=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
    def test_shift_invariance(self, x, c):
        with use_tracker(AllocationTracker()):
            a = logsumexp_last(Tensor.from_array(x, "f64")).data[0]
            b = logsumexp_last(Tensor.from_array(np.asarray(x) + c, "f64")).data[0]
        assert abs(b - (a + c)) <= 1e-12 * max(1.0, abs(a + c))

    def test_leading_axes_kept(self, tracker, rng):
        out = logsumexp_last(Tensor.from_array(rng.normal(size=(2, 3, 5)), "f32"))
        assert out.shape == (2, 3) and out.precision == "f32"


class TestCrop:
    def test_full_range_is_copy(self, tracker, rng):
        t = Tensor.from_array(rng.normal(size=(5, 4)), "f64")
        c = crop(t, [5, 4])
        assert np.array_equal(c.data, t.data)
        assert c.data is not t.data
        assert tracker.live_bytes == 2 * t.nbytes

    def test_hand_checked(self, tracker):
        c = crop(Tensor.from_array([[1, 2, 3], [4, 5, 6]], "f64"), [1, 2])
        assert c.data.tolist() == [[1, 2]]

    def test_indexwise(self, tracker, rng):
        src = rng.normal(size=(50, 11, 8))
        t = Tensor.from_array(src, "f32")
        c = crop(t, [45, 6, 8])
        for idx in np.ndindex(c.shape):
            assert c.data[idx] == t.data[idx]
        assert np.array_equal(t.data, src.astype(np.float32))

    def test_large_prefix(self, tracker, rng):
        src = rng.normal(size=(500, 101, 64)).astype(np.float32)
        c = crop(Tensor.from_array(src, "f32"), [454, 55, 64])
        assert c.shape == (454, 55, 64)
        idx = tuple(rng.integers(0, n, size=1000) for n in (454, 55, 64))
        assert np.array_equal(c.data[idx], src[idx])

    def test_prefix_too_long(self, tracker):
        with pytest.raises(InvalidShapeError):
            crop(alloc([3, 3]), [4, 3])
