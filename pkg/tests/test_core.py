import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crossview.core import SeededRng, affine, derive_seed, log_softmax, relu, softmax
from crossview.errors import NumericError, SizingError

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_affine_identity():
    np.testing.assert_array_equal(affine([1, 2], np.eye(2), [0, 0]), [1, 2])


def test_affine_columns_are_output_weights():
    # columns w1=(1,3), w2=(2,4); w1.x+1 = 5, w2.x = 6
    np.testing.assert_array_equal(affine([1, 1], [[1, 2], [3, 4]], [1, 0]), [5, 6])


def test_affine_zero_input_returns_bias(rng):
    W = rng.normal(size=(2, 2))
    np.testing.assert_array_equal(affine([0, 0], W, [3, -1]), [3, -1])


def test_affine_batch_matches_rows(rng):
    X, W, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
    batch = affine(X, W, b)
    for x, row in zip(X, batch):
        np.testing.assert_allclose(affine(x, W, b), row, rtol=0, atol=1e-14)


@pytest.mark.parametrize("x,W,b", [
    ([1, 2, 3], np.eye(2), [0, 0]),
    ([1, 2], np.eye(2), [0, 0, 0]),
    ([1, 2], np.ones(2), [0]),
])
def test_affine_dimension_mismatch(x, W, b):
    with pytest.raises(SizingError):
        affine(x, W, b)


@settings(max_examples=50)
@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite),
       finite, finite, st.integers(0, 2**32 - 1))
def test_affine_is_linear(x, y, a, c, seed):
    W = np.random.default_rng(seed).normal(size=(3, 4))
    zero = np.zeros(4)
    lhs = affine(a * x + c * y, W, zero)
    rhs = a * affine(x, W, zero) + c * affine(y, W, zero)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * (1 + np.abs(rhs).max()))


def test_relu_cases():
    np.testing.assert_array_equal(relu([-1, 0, 2]), [0, 0, 2])
    np.testing.assert_array_equal(relu([5]), [5])
    np.testing.assert_array_equal(relu([-3, -0.5, -1e-9]), [0, 0, 0])


def test_log_softmax_symmetric():
    np.testing.assert_allclose(log_softmax([0, 0]), [-np.log(2)] * 2, rtol=0, atol=1e-15)


@pytest.mark.parametrize("c", [-1e6, -3.0, 0.0, 7.5, 1e6])
def test_log_softmax_constant_logits(c):
    np.testing.assert_allclose(log_softmax([c, c, c]), [-np.log(3)] * 3, rtol=0, atol=1e-12)


def test_log_softmax_large_logits_against_mpmath():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    z = [1000, 0]
    lse = mpmath.log(sum(mpmath.exp(mpmath.mpf(v)) for v in z))
    expected = [float(mpmath.mpf(v) - lse) for v in z]
    got = log_softmax(z)
    assert np.all(np.isfinite(got))
    np.testing.assert_allclose(got, expected, rtol=1e-15, atol=0)


def test_log_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        log_softmax([0.0, np.inf])
    with pytest.raises(NumericError):
        log_softmax([np.nan, 1.0])


@settings(max_examples=100)
@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(-1e3, 1e3))
def test_log_softmax_shift_invariance_and_normalisation(x, c):
    np.testing.assert_allclose(log_softmax(x + c), log_softmax(x), rtol=0, atol=1e-12)
    assert abs(softmax(x).sum() - 1.0) < 1e-12


def test_rng_streams_repeat_bitwise():
    a = SeededRng(42).normal(size=1000)
    b = SeededRng(42).normal(size=1000)
    assert a.tobytes() == b.tobytes()
    assert SeededRng(43).normal(size=10).tobytes() != SeededRng(42).normal(size=10).tobytes()


def test_rng_is_philox_stream():
    ref = np.random.Generator(np.random.Philox(7)).uniform(size=5)
    np.testing.assert_array_equal(SeededRng(7).uniform(size=5), ref)


def test_derive_seed_is_sha256_prefix():
    import hashlib

    expected = int.from_bytes(hashlib.sha256(b"3/train/1").digest()[:8], "big")
    assert derive_seed(3, "train", 1) == expected
    assert derive_seed(3, "train", 1) != derive_seed(3, "train", 2)


def test_rng_rejects_out_of_range_seed():
    with pytest.raises(ValueError):
        SeededRng(-1)
    with pytest.raises(ValueError):
        SeededRng(2**64)
