# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled mirrors of the numpy_ref kernels; semantics documented there.

Loop bodies are branch-free so the C compiler can vectorize the exp and
tanh calls. Gate inputs are clamped to +/-40 before exp: the logistic
saturates to 0/1 well inside that range at double precision, and the
clamp keeps -ffast-math value-safe (no infinities). Single-threaded on
purpose: a fixed summation order keeps runs bit-reproducible.
"""

from libc.math cimport exp, fmax, fmin, log, tanh
from libc.stdint cimport int64_t


cdef inline double _sig(double x) nogil:
    return 1.0 / (1.0 + exp(-fmin(fmax(x, -40.0), 40.0)))


def lstm_cell_forward(double[:, ::1] z, double[:, ::1] c_prev,
                      double[:, ::1] h_out, double[:, ::1] c_out):
    # Staged as short two/three-pointer loops so gcc's vectorizer can
    # version them with runtime overlap checks.
    cdef Py_ssize_t b = c_prev.shape[0], n = c_prev.shape[1]
    cdef Py_ssize_t r, k
    cdef double* zr
    cdef double* cp
    cdef double* h
    cdef double* c
    with nogil:
        for r in range(b):
            zr = &z[r, 0]
            cp = &c_prev[r, 0]
            h = &h_out[r, 0]
            c = &c_out[r, 0]
            for k in range(n):  # c = sig(z_f)*c_prev + sig(z_i)*tanh(z_g)
                c[k] = _sig(zr[n + k]) * cp[k] + _sig(zr[k]) * tanh(zr[2 * n + k])
            for k in range(n):  # h = sig(z_o)*tanh(c)
                h[k] = _sig(zr[3 * n + k]) * tanh(c[k])


def lstm_cell_backward(double[:, ::1] z, double[:, ::1] c_prev, double[:, ::1] c,
                       double[:, ::1] dh, double[:, ::1] dc_in,
                       double[:, ::1] dz_out, double[:, ::1] dc_prev_out):
    cdef Py_ssize_t b = c_prev.shape[0], n = c_prev.shape[1]
    cdef Py_ssize_t r, k
    cdef double i, f, g, o, tc, dc
    cdef double* zr
    cdef double* cp
    cdef double* cr
    cdef double* dhr
    cdef double* dci
    cdef double* dz
    cdef double* dcp
    with nogil:
        for r in range(b):
            zr = &z[r, 0]
            cp = &c_prev[r, 0]
            cr = &c[r, 0]
            dhr = &dh[r, 0]
            dci = &dc_in[r, 0]
            dz = &dz_out[r, 0]
            dcp = &dc_prev_out[r, 0]
            for k in range(n):
                i = _sig(zr[k])
                f = _sig(zr[n + k])
                g = tanh(zr[2 * n + k])
                o = _sig(zr[3 * n + k])
                tc = tanh(cr[k])
                dc = dci[k] + dhr[k] * o * (1.0 - tc * tc)
                dz[k] = dc * g * i * (1.0 - i)
                dz[n + k] = dc * cp[k] * f * (1.0 - f)
                dz[2 * n + k] = dc * i * (1.0 - g * g)
                dz[3 * n + k] = dhr[k] * tc * o * (1.0 - o)
                dcp[k] = dc * f


def softmax_nll_forward(double[:, ::1] logits, int64_t[::1] targets,
                        double[::1] nll_out):
    cdef Py_ssize_t n = logits.shape[0], v = logits.shape[1]
    cdef Py_ssize_t r, k
    cdef double m, s
    with nogil:
        for r in range(n):
            m = logits[r, 0]
            for k in range(1, v):
                m = fmax(m, logits[r, k])
            s = 0.0
            for k in range(v):
                s += exp(logits[r, k] - m)
            nll_out[r] = log(s) + m - logits[r, targets[r]]


def softmax_nll_backward(double[:, ::1] logits, int64_t[::1] targets,
                         double[::1] rowscale, double[:, ::1] dlogits_out):
    cdef Py_ssize_t n = logits.shape[0], v = logits.shape[1]
    cdef Py_ssize_t r, k
    cdef double m, s, scale
    with nogil:
        for r in range(n):
            m = logits[r, 0]
            for k in range(1, v):
                m = fmax(m, logits[r, k])
            s = 0.0
            for k in range(v):
                dlogits_out[r, k] = exp(logits[r, k] - m)
                s += dlogits_out[r, k]
            scale = rowscale[r] / s
            for k in range(v):
                dlogits_out[r, k] *= scale
            dlogits_out[r, targets[r]] -= rowscale[r]


def scatter_add_rows(double[:, ::1] table, int64_t[::1] idx, double[:, ::1] rows):
    cdef Py_ssize_t n = rows.shape[0], w = rows.shape[1]
    cdef Py_ssize_t r, k
    with nogil:
        for r in range(n):
            for k in range(w):
                table[idx[r], k] += rows[r, k]
