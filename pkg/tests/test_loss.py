import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samplewise_rnnt.errors import InvalidInputError, NumericalDegeneracyError
from samplewise_rnnt.loss import (
    forward_backward,
    log_denominator,
    loss_gradient,
    loss_value,
    transducer_loss_batch,
    transducer_loss_sample,
)
from samplewise_rnnt.oracle import enumerate_paths_loss, fd_tolerance, finite_diff, uniform_loss
from samplewise_rnnt.tensor import AllocationTracker, Tensor, use_tracker


def T64(x):
    return Tensor.from_array(np.asarray(x, dtype=np.float64), "f64")


def lattice(h, y, t_len=None):
    ht = T64(h)
    ld = log_denominator(ht)
    alpha, beta = forward_backward(ht, ld, y, t_len)
    return ht, ld, alpha, beta


class TestLogDenominator:
    def test_uniform(self, tracker):
        out = log_denominator(T64(np.zeros((2, 3, 4))))
        np.testing.assert_allclose(out.data, math.log(4), rtol=1e-15)
        assert out.shape == (2, 3)

    def test_no_overflow(self, tracker):
        out = log_denominator(T64(np.full((1, 1, 2), 1000.0)))
        assert out.data[0, 0] == pytest.approx(1000 + math.log(2), rel=1e-15)

    def test_extended_precision(self, tracker, rng):
        h = rng.normal(scale=5, size=(2, 2, 5))
        out = log_denominator(T64(h))
        mpmath.mp.dps = 40
        for t, u in np.ndindex(2, 2):
            ref = mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(v)) for v in h[t, u]))
            assert out.data[t, u] == pytest.approx(float(ref), rel=1e-14)


class TestForwardBackward:
    def test_single_forced_blank(self, tracker):
        _, _, alpha, beta = lattice(np.zeros((1, 1, 2)), [])
        assert alpha.data.tolist() == [[0.0]]
        assert beta.data[0, 0] == pytest.approx(-0.693147, abs=1e-6)

    def test_two_paths(self, tracker):
        _, _, _, beta = lattice(np.zeros((2, 2, 2)), [1])
        assert beta.data[0, 0] == pytest.approx(-math.log(4), rel=1e-14)

    def test_random_against_enumeration(self, tracker, rng):
        h = rng.normal(size=(4, 3, 3))
        y = [2, 1]
        _, _, _, beta = lattice(h, y)
        assert -beta.data[0, 0] == pytest.approx(enumerate_paths_loss(h, None, y), rel=1e-9)

    def test_forward_backward_consistency(self, tracker, rng):
        for _ in range(20):
            T, U, V = rng.integers(1, 7), rng.integers(0, 5), rng.integers(2, 6)
            h = rng.normal(scale=2, size=(T, U + 1, V))
            y = rng.integers(1, V, size=U).tolist()
            _, ld, alpha, beta = lattice(h, y)
            end = alpha.data[T - 1, U] + h[T - 1, U, 0] - ld.data[T - 1, U]
            assert abs(end - beta.data[0, 0]) < 1e-9
            assert alpha.data[0, 0] == 0.0

    def test_cut_identity(self, tracker, rng):
        h = rng.normal(scale=2, size=(6, 4, 5))
        y = [3, 1, 4]
        _, ld, alpha, beta = lattice(h, y)
        log_z = beta.data[0, 0]
        lp_blank = h[:, :, 0] - ld.data
        for t in range(5):
            cut = np.logaddexp.reduce(alpha.data[t] + lp_blank[t] + beta.data[t + 1])
            assert abs(cut - log_z) < 1e-9

    def test_padding_cells_are_minus_inf(self, tracker, rng):
        h = rng.normal(size=(5, 4, 3))
        _, _, alpha, beta = lattice(h, [1], t_len=3)
        assert np.all(np.isfinite(alpha.data[:3, :2]))
        assert np.all(alpha.data[3:] == -np.inf) and np.all(beta.data[:, 2:] == -np.inf)

    def test_padded_equals_cropped(self, tracker, rng):
        h = rng.normal(size=(5, 4, 3))
        y = [2, 1]
        L_pad, dh_pad = transducer_loss_sample(T64(h), y, t_len=3)
        L_crop, dh_crop = transducer_loss_sample(T64(h[:3, :3]), y)
        assert L_pad == L_crop
        np.testing.assert_array_equal(dh_pad.data[:3, :3], dh_crop.data)
        assert np.all(dh_pad.data[3:] == 0) and np.all(dh_pad.data[:, 3:] == 0)

    def test_many_labels_few_frames(self, tracker, rng):
        h = rng.normal(size=(1, 6, 4))
        y = [1, 2, 3, 1, 2]
        L, _ = transducer_loss_sample(T64(h), y)
        assert L == pytest.approx(enumerate_paths_loss(h, None, y), rel=1e-12)

    def test_errors(self, tracker):
        h = T64(np.zeros((2, 2, 3)))
        ld = log_denominator(h)
        with pytest.raises(InvalidInputError):
            forward_backward(h, ld, [0])
        with pytest.raises(InvalidInputError):
            forward_backward(h, ld, [3])
        with pytest.raises(InvalidInputError):
            forward_backward(h, ld, [1], t_len=0)


class TestLossValue:
    @pytest.mark.parametrize("T,U,V", [(1, 0, 2), (2, 1, 2), (5, 3, 4), (10, 4, 8), (3, 3, 3)])
    def test_uniform_closed_form(self, tracker, T, U, V):
        _, _, _, beta = lattice(np.zeros((T, U + 1, V)), [1] * U)
        assert loss_value(beta) == pytest.approx(uniform_loss(T, U, V), abs=1e-9)

    def test_single(self, tracker):
        _, _, _, beta = lattice(np.zeros((1, 1, 2)), [])
        assert loss_value(beta) == pytest.approx(math.log(2), rel=1e-15)

    def test_random_against_enumeration(self, tracker, rng):
        h = rng.normal(size=(3, 3, 4))
        y = [3, 2]
        _, _, _, beta = lattice(h, y)
        assert loss_value(beta) == pytest.approx(enumerate_paths_loss(h, None, y), rel=1e-9)

    def test_degenerate(self, tracker):
        beta = T64([[-np.inf]])
        with pytest.raises(NumericalDegeneracyError):
            loss_value(beta)


class TestLossGradient:
    def test_forced_blank_cell(self, tracker):
        ht, ld, alpha, beta = lattice(np.zeros((1, 1, 2)), [])
        dh = loss_gradient(ht, ld, alpha, beta, [])
        np.testing.assert_allclose(dh.data[0, 0], [-0.5, 0.5], atol=1e-15)

    def test_column_sums_vanish(self, tracker, rng):
        for _ in range(10):
            T, U, V = rng.integers(1, 6), rng.integers(0, 4), rng.integers(2, 6)
            h = rng.normal(scale=3, size=(T + 2, U + 2, V))
            y = rng.integers(1, V, size=U).tolist()
            _, dh = transducer_loss_sample(T64(h), y, t_len=T)
            assert np.abs(dh.data.sum(axis=-1)).max() < 1e-10

    def test_finite_differences(self, tracker, rng):
        h = rng.normal(size=(3, 3, 4))
        y = [1, 3]
        _, dh = transducer_loss_sample(T64(h), y)

        def f(x):
            with use_tracker(AllocationTracker()):
                return transducer_loss_sample(T64(x), y)[0]

        numeric = finite_diff(f, h)
        assert np.all(np.abs(dh.data - numeric) <= fd_tolerance(numeric))

    def test_no_probability_tensor(self, tracker, rng):
        h = T64(rng.normal(size=(6, 4, 50)))
        tracker.reset()
        base = tracker.live_bytes
        _, dh = transducer_loss_sample(h, [1, 2, 3])
        lattice_bytes = 6 * 4 * 8
        # dh plus log_den, alpha, beta and nothing V-sized besides dh
        assert tracker.peak_bytes - base == dh.nbytes + 3 * lattice_bytes

    def test_f32_scores(self, tracker, rng):
        h = rng.normal(size=(4, 3, 5))
        L32, dh32 = transducer_loss_sample(Tensor.from_array(h, "f32"), [1, 2])
        L64, dh64 = transducer_loss_sample(T64(h.astype(np.float32)), [1, 2])
        assert dh32.precision == "f32"
        assert L32 == pytest.approx(L64, rel=1e-6)
        np.testing.assert_allclose(dh32.data, dh64.data, atol=1e-6)


@pytest.mark.parametrize("T,U,V", [(2, 1, 2), (5, 3, 4), (10, 4, 8)])
def test_sample_pipeline_uniform(tracker, T, U, V):
    L, dh = transducer_loss_sample(T64(np.zeros((T, U + 1, V))), [1] * U)
    assert L == pytest.approx(uniform_loss(T, U, V), abs=1e-9)
    assert np.abs(dh.data.sum(axis=-1)).max() < 1e-10


def test_sample_pipeline_random(tracker, rng):
    h = rng.normal(size=(4, 3, 5))
    y = [4, 2]
    L, dh = transducer_loss_sample(T64(h), y)
    assert L == pytest.approx(enumerate_paths_loss(h, None, y), rel=1e-9)

    def f(x):
        with use_tracker(AllocationTracker()):
            return transducer_loss_sample(T64(x), y)[0]

    numeric = finite_diff(f, h)
    assert np.all(np.abs(dh.data - numeric) <= fd_tolerance(numeric))


def test_batch_loss_matches_samples(tracker, rng):
    B, T, U, V = 3, 5, 3, 4
    h = rng.normal(size=(B, T, U + 1, V))
    labels = rng.integers(1, V, size=(B, U))
    t_len, u_len = [5, 2, 4], [3, 0, 2]
    losses, dh = transducer_loss_batch(T64(h), labels, t_len, u_len)
    for b in range(B):
        L, dh_b = transducer_loss_sample(T64(h[b]), labels[b, : u_len[b]], t_len[b])
        assert losses[b] == L
        np.testing.assert_array_equal(dh.data[b], dh_b.data)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 3), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_oracle_equivalence_property(T, U, V, seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(scale=2, size=(T, U + 1, V))
    y = rng.integers(1, V, size=U).tolist()
    with use_tracker(AllocationTracker()):
        L, _ = transducer_loss_sample(T64(h), y)
    ref = enumerate_paths_loss(h, None, y)
    assert abs(L - ref) <= 1e-9 * abs(ref)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 3), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_cellwise_shift_invariance(T, U, V, seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(T, U + 1, V))
    shift = rng.normal(scale=10, size=(T, U + 1, 1))
    y = rng.integers(1, V, size=U).tolist()
    with use_tracker(AllocationTracker()):
        a, _ = transducer_loss_sample(T64(h), y)
        b, _ = transducer_loss_sample(T64(h + shift), y)
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))
