# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the receiver DSP.

Same signatures and semantics as :mod:`qdcomb._kernels_py`.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs, M_PI
cdef extern from "complex.h" nogil:
    double creal(double complex)
    double cimag(double complex)
    double complex conj(double complex)
    double complex cexp(double complex)

cnp.import_array()


def cma_run(const double complex[:, ::1] xin, double complex[:, :, ::1] taps,
            double mu, double radius, Py_ssize_t n_sym, Py_ssize_t sps,
            double complex[:, ::1] out, double[::1] err, bint adapt=True):
    """Run the 2x2 butterfly over ``n_sym`` symbols, adapting ``taps`` in place.

    Output ``k`` of stream ``o`` is ``sum_p sum_i taps[o, p, i] * xin[p, sps*k + i]``.
    ``err[k]`` receives the mean squared modulus error of both outputs.
    """
    cdef Py_ssize_t n_taps = taps.shape[2]
    cdef Py_ssize_t k, i, o, p, base
    cdef double complex acc, g
    cdef double complex y[2]
    cdef double e[2]
    cdef double mag2
    if xin.shape[1] < sps * (n_sym - 1) + n_taps:
        raise ValueError("input too short for the requested number of symbols")
    with nogil:
        for k in range(n_sym):
            base = sps * k
            for o in range(2):
                acc = 0
                for p in range(2):
                    for i in range(n_taps):
                        acc = acc + taps[o, p, i] * xin[p, base + i]
                y[o] = acc
                mag2 = creal(acc) * creal(acc) + cimag(acc) * cimag(acc)
                e[o] = radius - mag2
                out[o, k] = acc
            err[k] = 0.5 * (e[0] * e[0] + e[1] * e[1])
            if adapt:
                for o in range(2):
                    g = mu * e[o] * y[o]
                    for p in range(2):
                        for i in range(n_taps):
                            taps[o, p, i] = taps[o, p, i] + g * conj(xin[p, base + i])


cdef inline double _slice_err(double v, const double[::1] levels, double lo, double step,
                              Py_ssize_t n_levels) nogil:
    cdef double idx = floor((v - lo) / step + 0.5)
    cdef Py_ssize_t j
    if idx < 0:
        j = 0
    elif idx > n_levels - 1:
        j = n_levels - 1
    else:
        j = <Py_ssize_t>idx
    return v - levels[j]


def bps_unwrapped(const double complex[::1] sym, const double[::1] test_phases,
                  const double[::1] levels, Py_ssize_t h_lo, Py_ssize_t h_hi,
                  double tie_rtol, double symmetry):
    """Per-symbol blind phase search with sequential unwrapping.

    Returns the unwrapped de-rotation phase (radians) for every symbol.
    ``symmetry`` is the rotational symmetry angle of the constellation.
    """
    cdef Py_ssize_t K = sym.shape[0]
    cdef Py_ssize_t B = test_phases.shape[0]
    cdef Py_ssize_t W = h_lo + h_hi + 1
    cdef Py_ssize_t n_levels = levels.shape[0]
    cdef double lo = levels[0]
    cdef double step = levels[1] - levels[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ring_arr = np.zeros((W, B))
    cdef double[:, ::1] ring = ring_arr
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] rot_arr = np.exp(1j * np.asarray(test_phases))
    cdef double complex[::1] rot = rot_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] metric_arr = np.zeros(B)
    cdef double[::1] metric = metric_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_arr = np.empty(K)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, j, b, a_k, b_k, m, next_row = 0, best
    cdef double complex r
    cdef double er, ei, mmin, tol, prev = 0.0, cand, dist, best_dist, shift
    with nogil:
        for k in range(K):
            a_k = h_lo
            b_k = h_hi
            if k - h_lo < 0 or k + h_hi > K - 1:
                m = k if k < K - 1 - k else K - 1 - k
                if a_k > m:
                    a_k = m
                if b_k > m:
                    b_k = m
            while next_row <= k + b_k:
                for b in range(B):
                    r = sym[next_row] * rot[b]
                    er = _slice_err(creal(r), levels, lo, step, n_levels)
                    ei = _slice_err(cimag(r), levels, lo, step, n_levels)
                    ring[next_row % W, b] = er * er + ei * ei
                next_row += 1
            for b in range(B):
                metric[b] = 0.0
            for j in range(k - a_k, k + b_k + 1):
                for b in range(B):
                    metric[b] += ring[j % W, b]
            mmin = metric[0]
            best = 0
            for b in range(1, B):
                if metric[b] < mmin:
                    mmin = metric[b]
                    best = b
            tol = tie_rtol * mmin + 1e-15
            best_dist = -1.0
            for b in range(B):
                if metric[b] <= mmin + tol:
                    if k == 0:
                        dist = fabs(test_phases[b])
                        cand = test_phases[b]
                    else:
                        shift = symmetry * floor((prev - test_phases[b]) / symmetry + 0.5)
                        cand = test_phases[b] + shift
                        dist = fabs(cand - prev)
                    if best_dist < 0 or dist < best_dist:
                        best_dist = dist
                        best = b
                        out[k] = cand
            prev = out[k]
    return out_arr
