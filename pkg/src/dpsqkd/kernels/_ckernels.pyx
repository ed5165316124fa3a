# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: per-slot click sampling, dead-time filtering and
LFSR bit generation.  Semantics match ``_pykernels`` bit for bit."""

import numpy as np


def candidate_clicks(const unsigned char[::1] code, const double[::1] g_tab,
                     const double[::1] f_slot, const double[::1] u):
    cdef Py_ssize_t N = code.shape[0]
    cdef Py_ssize_t n = f_slot.shape[0]
    if N % n != 0:
        raise ValueError("code length must be a multiple of the window size")
    out_arr = np.empty(N, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef Py_ssize_t i, m = 0, s = 0
    cdef double p
    for i in range(N):
        p = 1.0 - g_tab[code[i]] * f_slot[s]
        if u[i] < p:
            out[m] = i
            m += 1
        s += 1
        if s == n:
            s = 0
    return out_arr[:m].copy()


def dead_time_filter(const double[::1] t, double dead, double last):
    cdef Py_ssize_t m = t.shape[0]
    if dead <= 0.0:
        if m:
            last = t[m - 1]
        return np.arange(m, dtype=np.int64), last
    out_arr = np.empty(m, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef Py_ssize_t i, k = 0
    for i in range(m):
        if t[i] - last >= dead:
            out[k] = i
            k += 1
            last = t[i]
    return out_arr[:k].copy(), last


def lfsr_bits(int order, int tap, state, Py_ssize_t count):
    cdef unsigned long long s = state
    cdef unsigned long long mask = ((<unsigned long long>1) << order) - 1
    out_arr = np.empty(count, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    cdef unsigned long long ob, fb
    cdef Py_ssize_t i
    for i in range(count):
        ob = (s >> (order - 1)) & 1
        fb = ob ^ ((s >> (tap - 1)) & 1)
        s = ((s << 1) | fb) & mask
        out[i] = <unsigned char> ob
    return out_arr, int(s)
