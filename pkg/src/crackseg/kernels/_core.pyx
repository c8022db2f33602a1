# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the convolution/pooling inner loops.

Semantics mirror ``numpy_impl`` exactly, including the accumulation order
in col2im_add and the max-pool tie rule, so the two backends are
interchangeable bit for bit.
"""
import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int sh, int sw, int ph, int pw):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t wo = (w + 2 * pw - kw) // sw + 1
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.empty((b, ho, wo, kh * kw * c), dtype=dtype)
    cdef real[:, :, :, ::1] cols = cols_arr
    cdef Py_ssize_t n, oh, ow, i, j, ch, r, cc, base
    with nogil:
        for n in range(b):
            for oh in range(ho):
                for ow in range(wo):
                    for i in range(kh):
                        r = oh * sh + i - ph
                        for j in range(kw):
                            cc = ow * sw + j - pw
                            base = (i * kw + j) * c
                            if 0 <= r < h and 0 <= cc < w:
                                for ch in range(c):
                                    cols[n, oh, ow, base + ch] = x[n, r, cc, ch]
                            else:
                                for ch in range(c):
                                    cols[n, oh, ow, base + ch] = 0
    return cols_arr


def col2im_add(real[:, :, :, ::1] cols, int h, int w, int kh, int kw,
               int sh, int sw, int ph, int pw):
    cdef Py_ssize_t b = cols.shape[0], ho = cols.shape[1], wo = cols.shape[2]
    cdef Py_ssize_t c = cols.shape[3] // (kh * kw)
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((b, h, w, c), dtype=dtype)
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, oh, ow, i, j, ch, r, cc, base
    # (i, j) stays outermost to reproduce numpy_impl's per-cell addition order.
    with nogil:
        for i in range(kh):
            for j in range(kw):
                base = (i * kw + j) * c
                for n in range(b):
                    for oh in range(ho):
                        r = oh * sh + i - ph
                        if r < 0 or r >= h:
                            continue
                        for ow in range(wo):
                            cc = ow * sw + j - pw
                            if cc < 0 or cc >= w:
                                continue
                            for ch in range(c):
                                gx[n, r, cc, ch] += cols[n, oh, ow, base + ch]
    return gx_arr


def maxpool2x2_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((b, ho, wo, c), dtype=dtype)
    arg_arr = np.empty((b, ho, wo, c), dtype=np.uint8)
    cdef real[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, oh, ow, ch, k, i, j
    cdef real best, v
    cdef unsigned char bi
    with nogil:
        for n in range(b):
            for oh in range(ho):
                for ow in range(wo):
                    for ch in range(c):
                        best = x[n, 2 * oh, 2 * ow, ch]
                        bi = 0
                        for k in range(1, 4):
                            i = k // 2
                            j = k % 2
                            v = x[n, 2 * oh + i, 2 * ow + j, ch]
                            if v > best:
                                best = v
                                bi = <unsigned char> k
                        out[n, oh, ow, ch] = best
                        arg[n, oh, ow, ch] = bi
    return out_arr, arg_arr


def maxpool2x2_backward(unsigned char[:, :, :, ::1] arg, real[:, :, :, ::1] grad_out):
    cdef Py_ssize_t b = grad_out.shape[0], ho = grad_out.shape[1]
    cdef Py_ssize_t wo = grad_out.shape[2], c = grad_out.shape[3]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((b, 2 * ho, 2 * wo, c), dtype=dtype)
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, oh, ow, ch
    cdef unsigned char k
    with nogil:
        for n in range(b):
            for oh in range(ho):
                for ow in range(wo):
                    for ch in range(c):
                        k = arg[n, oh, ow, ch]
                        gx[n, 2 * oh + (k // 2), 2 * ow + (k % 2), ch] = grad_out[n, oh, ow, ch]
    return gx_arr
