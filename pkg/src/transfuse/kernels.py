"""Pixel-level inner loops.

Every kernel has two implementations with identical signatures: a numba
``@njit`` version and a pure-numpy version.  The module-level names point at
the numba versions unless numba is missing or ``TRANSFUSE_DISABLE_NUMBA`` is
set to a truthy value before import.  Both sets stay importable as
``numba_kernels`` / ``numpy_kernels`` so tests and the benchmark can compare
them directly.

Reflect padding follows ``numpy.pad(mode="reflect")``: the edge sample is not
repeated, and pads wider than the array keep bouncing between the edges.
"""
import os
from types import SimpleNamespace

import numpy as np

_FLAG = os.environ.get("TRANSFUSE_DISABLE_NUMBA", "").strip().lower()
NUMBA_REQUESTED = _FLAG not in ("1", "true", "yes", "on")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

MODE_REFLECT = 0
MODE_VALID = 1


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_reflect_indices(n, pad):
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _np_filter_axis(img, kernel, axis, mode):
    radius = (kernel.shape[0] - 1) // 2
    n = img.shape[axis]
    if mode == MODE_REFLECT:
        padded = np.take(img, _np_reflect_indices(n, radius), axis=axis)
        n_out = n
    else:
        padded = img
        n_out = n - 2 * radius
    out = np.zeros(
        img.shape[:axis] + (n_out,) + img.shape[axis + 1:], dtype=np.float64
    )
    for k in range(kernel.shape[0]):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(k, k + n_out)
        out += kernel[k] * padded[tuple(sl)]
    return out


def np_separable_filter(img, kernel, mode=MODE_REFLECT):
    """Correlate a 2-D array with ``outer(kernel, kernel)``.

    Rows are filtered first, then columns.  ``mode`` is ``MODE_REFLECT``
    (same-size output) or ``MODE_VALID`` (shrinks by ``len(kernel) - 1``).
    """
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    tmp = _np_filter_axis(img, kernel, 1, mode)
    return _np_filter_axis(tmp, kernel, 0, mode)


def np_apply_lut(values, lut):
    """Piecewise-linear lookup of ``values`` in [0,1] on a uniform ``lut`` grid."""
    values = np.asarray(values, dtype=np.float64)
    lut = np.asarray(lut, dtype=np.float64)
    top = lut.shape[0] - 1
    pos = np.clip(values, 0.0, 1.0) * top
    i0 = np.minimum(np.floor(pos).astype(np.int64), top - 1)
    frac = pos - i0
    return lut[i0] + frac * (lut[i0 + 1] - lut[i0])


def np_sobel(img):
    """Horizontal and vertical Sobel responses with reflect borders."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    p = img[np.ix_(_np_reflect_indices(h, 1), _np_reflect_indices(w, 1))]
    tl, tc, tr = p[:-2, :-2], p[:-2, 1:-1], p[:-2, 2:]
    ml, mr = p[1:-1, :-2], p[1:-1, 2:]
    bl, bc, br = p[2:, :-2], p[2:, 1:-1], p[2:, 2:]
    gx = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl)
    gy = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr)
    return gx, gy


numpy_kernels = SimpleNamespace(
    separable_filter=np_separable_filter,
    apply_lut=np_apply_lut,
    sobel=np_sobel,
    backend="numpy",
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_reflect(i, n):
        if n == 1:
            return 0
        period = 2 * (n - 1)
        i = i % period
        if i < 0:
            i += period
        if i >= n:
            i = period - i
        return i

    @njit(cache=True)
    def _nb_tap_index(n_out, n, kn, mode):
        r = (kn - 1) // 2
        idx = np.empty((n_out, kn), dtype=np.int64)
        for j in range(n_out):
            for k in range(kn):
                idx[j, k] = _nb_reflect(j + k - r, n) if mode == 0 else j + k
        return idx

    @njit(cache=True)
    def _nb_separable_filter(img, kernel, mode):
        h, w = img.shape
        kn = kernel.shape[0]
        r = (kn - 1) // 2
        if mode == 0:
            oh, ow = h, w
        else:
            oh, ow = h - 2 * r, w - 2 * r
        cols = _nb_tap_index(ow, w, kn, mode)
        rows = _nb_tap_index(oh, h, kn, mode)
        tmp = np.zeros((h, ow))
        for i in range(h):
            for j in range(ow):
                acc = 0.0
                for k in range(kn):
                    acc += kernel[k] * img[i, cols[j, k]]
                tmp[i, j] = acc
        out = np.zeros((oh, ow))
        for i in range(oh):
            for k in range(kn):
                ii = rows[i, k]
                wk = kernel[k]
                for j in range(ow):
                    out[i, j] += wk * tmp[ii, j]
        return out

    @njit(cache=True)
    def _nb_apply_lut(values, lut):
        flat = values.ravel()
        out = np.empty(flat.shape[0])
        top = lut.shape[0] - 1
        for n in range(flat.shape[0]):
            v = min(max(flat[n], 0.0), 1.0)
            pos = v * top
            i0 = min(int(np.floor(pos)), top - 1)
            frac = pos - i0
            out[n] = lut[i0] + frac * (lut[i0 + 1] - lut[i0])
        return out.reshape(values.shape)

    @njit(cache=True)
    def _nb_sobel(img):
        h, w = img.shape
        gx = np.empty((h, w))
        gy = np.empty((h, w))
        for i in range(h):
            im = _nb_reflect(i - 1, h)
            ip = _nb_reflect(i + 1, h)
            for j in range(w):
                jm = _nb_reflect(j - 1, w)
                jp = _nb_reflect(j + 1, w)
                tl = img[im, jm]
                tc = img[im, j]
                tr = img[im, jp]
                ml = img[i, jm]
                mr = img[i, jp]
                bl = img[ip, jm]
                bc = img[ip, j]
                br = img[ip, jp]
                gx[i, j] = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl)
                gy[i, j] = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr)
        return gx, gy

    def nb_separable_filter(img, kernel, mode=MODE_REFLECT):
        img = np.ascontiguousarray(img, dtype=np.float64)
        kernel = np.ascontiguousarray(kernel, dtype=np.float64)
        return _nb_separable_filter(img, kernel, int(mode))

    def nb_apply_lut(values, lut):
        values = np.asarray(values, dtype=np.float64)
        lut = np.ascontiguousarray(lut, dtype=np.float64)
        return _nb_apply_lut(np.ascontiguousarray(values.reshape(-1)), lut).reshape(values.shape)

    def nb_sobel(img):
        return _nb_sobel(np.ascontiguousarray(img, dtype=np.float64))

    numba_kernels = SimpleNamespace(
        separable_filter=nb_separable_filter,
        apply_lut=nb_apply_lut,
        sobel=nb_sobel,
        backend="numba",
    )
else:  # pragma: no cover
    numba_kernels = None


_active = numba_kernels if (HAS_NUMBA and NUMBA_REQUESTED) else numpy_kernels

BACKEND = _active.backend
separable_filter = _active.separable_filter
apply_lut = _active.apply_lut
sobel = _active.sobel


def warmup():
    """Trigger JIT compilation so later timings exclude it."""
    if BACKEND != "numba":
        return
    img = np.zeros((4, 4))
    separable_filter(img, np.ones(3) / 3.0, MODE_REFLECT)
    separable_filter(img, np.ones(3) / 3.0, MODE_VALID)
    apply_lut(img, np.linspace(0.0, 1.0, 8))
    sobel(img)
