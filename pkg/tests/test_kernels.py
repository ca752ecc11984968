import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from transfuse import kernels

pytestmark = pytest.mark.skipif(kernels.numba_kernels is None, reason="numba not installed")

small_images = arrays(
    np.float64,
    st.tuples(st.integers(1, 12), st.integers(1, 12)),
    elements=st.floats(0.0, 1.0),
)


def test_reflect_indices_match_numpy_pad():
    for n in (1, 2, 3, 5):
        for pad in (0, 1, 4, 11):
            x = np.arange(n, dtype=float)
            expect = np.pad(x, pad, mode="reflect") if n > 1 else np.zeros(n + 2 * pad)
            got = x[kernels._np_reflect_indices(n, pad)]
            np.testing.assert_array_equal(got, expect)


@given(small_images, st.integers(0, 9))
@settings(max_examples=60, deadline=None)
def test_reflect_filter_backends_agree(img, radius):
    k = np.random.default_rng(radius).random(2 * radius + 1)
    a = kernels.numpy_kernels.separable_filter(img, k)
    b = kernels.numba_kernels.separable_filter(img, k)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_reflect_filter_matches_padded_2d_correlation(rng):
    img = rng.random((7, 9))
    k = rng.random(5)
    padded = np.pad(img, 2, mode="reflect")
    k2 = np.outer(k, k)
    expect = np.array(
        [[np.sum(padded[i:i + 5, j:j + 5] * k2) for j in range(9)] for i in range(7)]
    )
    for impl in (kernels.numpy_kernels, kernels.numba_kernels):
        np.testing.assert_allclose(impl.separable_filter(img, k), expect, rtol=1e-12)


def test_valid_filter_backends_agree(rng):
    img = rng.random((20, 17))
    k = rng.random(11)
    a = kernels.numpy_kernels.separable_filter(img, k, kernels.MODE_VALID)
    b = kernels.numba_kernels.separable_filter(img, k, kernels.MODE_VALID)
    assert a.shape == (10, 7)
    np.testing.assert_allclose(a, b, rtol=1e-12)


@given(arrays(np.float64, (6, 5), elements=st.floats(0.0, 1.0)))
@settings(max_examples=50, deadline=None)
def test_lut_backends_agree_and_match_interp(values):
    lut = np.sort(np.random.default_rng(0).random(97))
    grid = np.linspace(0.0, 1.0, 97)
    a = kernels.numpy_kernels.apply_lut(values, lut)
    b = kernels.numba_kernels.apply_lut(values, lut)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, np.interp(values, grid, lut), atol=1e-12)


def test_sobel_backends_agree(rng):
    img = rng.random((13, 8))
    for a, b in zip(kernels.numpy_kernels.sobel(img), kernels.numba_kernels.sobel(img)):
        np.testing.assert_array_equal(a, b)


def test_sobel_of_ramp():
    img = np.tile(np.arange(6, dtype=float), (5, 1))
    gx, gy = kernels.sobel(img)
    # interior: (1 + 2 + 1) * 2 ; reflect borders make the edge columns zero
    np.testing.assert_array_equal(gx[:, 1:-1], 8.0)
    np.testing.assert_array_equal(gx[:, [0, -1]], 0.0)
    np.testing.assert_array_equal(gy, 0.0)


def test_active_backend_reflects_flag():
    assert kernels.BACKEND in ("numba", "numpy")
    if kernels.NUMBA_REQUESTED and kernels.HAS_NUMBA:
        assert kernels.BACKEND == "numba"
