# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled versions of the kernels in ``_kernels_py``."""
import numpy as np

cimport cython
from libcpp.algorithm cimport nth_element
from libcpp.vector cimport vector

ctypedef fused real:
    float
    double


def im2col3x3(real[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((c * 9, h * w), dtype=dtype)
    cdef real[:, ::1] cols = out
    cdef Py_ssize_t ci, ky, kx, y, xx, sy, sx, row, y0, y1, x0, x1
    with nogil:
        for ci in range(c):
            for ky in range(3):
                y0 = 1 - ky if ky < 1 else 0
                y1 = h - (ky - 1) if ky > 1 else h
                for kx in range(3):
                    row = ci * 9 + ky * 3 + kx
                    x0 = 1 - kx if kx < 1 else 0
                    x1 = w - (kx - 1) if kx > 1 else w
                    for y in range(y0, y1):
                        sy = y + ky - 1
                        for xx in range(x0, x1):
                            cols[row, y * w + xx] = x[ci, sy, xx + kx - 1]
    return out


def col2im3x3(real[:, ::1] cols, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w):
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((c, h, w), dtype=dtype)
    cdef real[:, :, ::1] img = out
    cdef Py_ssize_t ci, ky, kx, y, xx, sy, row, y0, y1, x0, x1
    with nogil:
        for ci in range(c):
            for ky in range(3):
                y0 = 1 - ky if ky < 1 else 0
                y1 = h - (ky - 1) if ky > 1 else h
                for kx in range(3):
                    row = ci * 9 + ky * 3 + kx
                    x0 = 1 - kx if kx < 1 else 0
                    x1 = w - (kx - 1) if kx > 1 else w
                    for y in range(y0, y1):
                        sy = y + ky - 1
                        for xx in range(x0, x1):
                            img[ci, sy, xx + kx - 1] += cols[row, y * w + xx]
    return out


def masked_l1(pred, obs, mask):
    p = np.ascontiguousarray(pred).reshape(-1)
    o = np.ascontiguousarray(obs, dtype=p.dtype).reshape(-1)
    m = np.ascontiguousarray(mask, dtype=np.uint8).reshape(-1)
    loss, grad, n = _masked_l1(p, o, m)
    return loss, grad.reshape(np.shape(pred)), n


def _masked_l1(real[::1] p, real[::1] o, unsigned char[::1] m):
    cdef Py_ssize_t i, size = p.shape[0]
    cdef Py_ssize_t n = 0
    cdef double acc = 0.0, d
    dtype = np.float32 if real is float else np.float64
    out = np.zeros(size, dtype=dtype)
    cdef real[::1] g = out
    with nogil:
        for i in range(size):
            if m[i]:
                n += 1
        if n > 0:
            for i in range(size):
                if m[i]:
                    d = <double>p[i] - <double>o[i]
                    if d > 0:
                        acc += d
                        g[i] = <real>(1.0 / n)
                    elif d < 0:
                        acc -= d
                        g[i] = <real>(-1.0 / n)
    if n == 0:
        return float("nan"), out, 0
    return acc / n, out, int(n)


def select_ranks(values, Py_ssize_t lo, Py_ssize_t hi):
    if hi < lo:
        lo, hi = hi, lo
    arr = np.ascontiguousarray(values)
    k = arr.shape[0]
    if not 0 <= lo < k or hi >= k:
        raise IndexError(f"ranks ({lo}, {hi}) outside ensemble of size {k}")
    if hi == lo:
        part = np.partition(arr, lo, axis=0)[lo]
        return part.copy(), part.copy()
    flat = arr.reshape(k, -1)
    lo_out, hi_out = _select_ranks(flat, lo, hi)
    return lo_out.reshape(arr.shape[1:]), hi_out.reshape(arr.shape[1:])


def _select_ranks(real[:, ::1] v, Py_ssize_t lo, Py_ssize_t hi):
    cdef Py_ssize_t k = v.shape[0], npts = v.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    lo_arr = np.empty(npts, dtype=dtype)
    hi_arr = np.empty(npts, dtype=dtype)
    cdef real[::1] lo_v = lo_arr
    cdef real[::1] hi_v = hi_arr
    cdef vector[double] buf
    buf.resize(k)
    with nogil:
        for j in range(npts):
            for i in range(k):
                buf[i] = v[i, j]
            nth_element(buf.begin(), buf.begin() + lo, buf.end())
            lo_v[j] = <real>buf[lo]
            # elements after lo are >= buf[lo]; hi > lo so search only there
            nth_element(buf.begin() + lo + 1, buf.begin() + hi, buf.end())
            hi_v[j] = <real>buf[hi]
    return lo_arr, hi_arr
