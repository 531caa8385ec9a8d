# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: 3x3 patch unfolding, its adjoint, the phase
vocoder frame loop and windowed-sinc resampling.

Signatures and semantics match ``_kernels_py`` exactly.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sin, cos, round as cround, M_PI

from ._kernels_py import kaiser_table

cnp.import_array()

ctypedef fused real_t:
    float
    double

cdef enum:
    KSIZE = 3
    TABLE_DENSITY = 512


def conv_output_size(Py_ssize_t size, Py_ssize_t stride, Py_ssize_t pad=1):
    return (size + 2 * pad - KSIZE) // stride + 1


cdef void _im2col(const real_t[:, :, :, ::1] x, real_t[:, :, :, :, :, ::1] cols,
                  Py_ssize_t stride, Py_ssize_t pad) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, oh, ow, ih, iw
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = cols.shape[4], Wo = cols.shape[5]
    for n in range(N):
        for c in range(C):
            for i in range(KSIZE):
                for j in range(KSIZE):
                    for oh in range(Ho):
                        ih = oh * stride + i - pad
                        if ih < 0 or ih >= H:
                            for ow in range(Wo):
                                cols[n, c, i, j, oh, ow] = 0
                            continue
                        for ow in range(Wo):
                            iw = ow * stride + j - pad
                            if iw < 0 or iw >= W:
                                cols[n, c, i, j, oh, ow] = 0
                            else:
                                cols[n, c, i, j, oh, ow] = x[n, c, ih, iw]


cdef void _col2im(const real_t[:, :, :, :, :, ::1] cols, real_t[:, :, :, ::1] x,
                  Py_ssize_t stride, Py_ssize_t pad) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, oh, ow, ih, iw
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = cols.shape[4], Wo = cols.shape[5]
    for n in range(N):
        for c in range(C):
            for i in range(KSIZE):
                for j in range(KSIZE):
                    for oh in range(Ho):
                        ih = oh * stride + i - pad
                        if ih < 0 or ih >= H:
                            continue
                        for ow in range(Wo):
                            iw = ow * stride + j - pad
                            if iw >= 0 and iw < W:
                                x[n, c, ih, iw] += cols[n, c, i, j, oh, ow]


def im2col(x, Py_ssize_t stride, Py_ssize_t pad=1):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = conv_output_size(h, stride, pad)
    wo = conv_output_size(w, stride, pad)
    cols = np.empty((n, c, KSIZE, KSIZE, ho, wo), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, cols, stride, pad)
    elif x.dtype == np.float64:
        _im2col[double](x, cols, stride, pad)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


def col2im(cols, Py_ssize_t h, Py_ssize_t w, Py_ssize_t stride, Py_ssize_t pad=1):
    cols = np.ascontiguousarray(cols)
    n, c = cols.shape[0], cols.shape[1]
    x = np.zeros((n, c, h, w), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, x, stride, pad)
    elif cols.dtype == np.float64:
        _col2im[double](cols, x, stride, pad)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return x


def phase_vocoder(spec, positions, hop, n_fft):
    spec = np.asarray(spec, dtype=np.complex128)
    cdef const double[:, ::1] mag = np.ascontiguousarray(np.abs(spec))
    cdef const double[:, ::1] ang = np.ascontiguousarray(np.angle(spec))
    cdef const double[::1] pos = np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t n_bins = mag.shape[0], n_frames = mag.shape[1], n_out = pos.shape[0]
    out_arr = np.empty((n_bins, n_out), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef double[::1] phase = np.array(ang[:, 0], dtype=np.float64)
    cdef double two_pi = 2.0 * M_PI
    cdef double step = two_pi * hop / n_fft
    cdef Py_ssize_t k, j, i0, i1
    cdef double t, frac, m, expected, dphi
    with nogil:
        for j in range(n_out):
            t = pos[j]
            i0 = <Py_ssize_t>floor(t)
            frac = t - i0
            i1 = i0 + 1
            if i1 > n_frames - 1:
                i1 = n_frames - 1
            for k in range(n_bins):
                m = (1.0 - frac) * mag[k, i0] + frac * mag[k, i1]
                out[k, j].real = m * cos(phase[k])
                out[k, j].imag = m * sin(phase[k])
                expected = step * k
                if i1 == i0:
                    phase[k] += expected
                else:
                    dphi = ang[k, i1] - ang[k, i0] - expected
                    dphi -= two_pi * cround(dphi / two_pi)
                    phase[k] += expected + dphi
    return out_arr


def sinc_resample(x, double ratio, Py_ssize_t out_len, Py_ssize_t half_taps=32, double beta=8.6):
    cdef const double[::1] src = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] table = kaiser_table(half_taps, beta)
    out_arr = np.empty(out_len, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t n = src.shape[0], m, k, centre, idx
    cdef Py_ssize_t last = table.shape[0] - 1
    cdef double cutoff = ratio if ratio < 1.0 else 1.0
    cdef double t, d, u, acc, arg, h, w
    cdef double step = M_PI * cutoff, cos_step = cos(step), sin_step = sin(step)
    cdef double s_arg, c_arg, tmp
    cdef Py_ssize_t k0
    with nogil:
        for m in range(out_len):
            t = m / ratio
            centre = <Py_ssize_t>floor(t)
            acc = 0.0
            k0 = centre - half_taps + 1
            # sin/cos of pi*cutoff*(t - k), advanced by angle addition as k grows
            arg = step * (t - k0)
            s_arg = sin(arg)
            c_arg = cos(arg)
            for k in range(k0, centre + half_taps + 1):
                if k >= 0 and k < n:
                    d = t - k
                    u = (d if d >= 0.0 else -d) * TABLE_DENSITY
                    idx = <Py_ssize_t>u
                    if idx >= last:
                        w = table[last]
                    else:
                        u -= idx
                        w = (1.0 - u) * table[idx] + u * table[idx + 1]
                    if d == 0.0:
                        h = cutoff
                    else:
                        h = s_arg / (M_PI * d)
                    acc += h * w * src[k]
                tmp = s_arg * cos_step - c_arg * sin_step
                c_arg = c_arg * cos_step + s_arg * sin_step
                s_arg = tmp
            out[m] = acc
    return out_arr
