# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled xoshiro256** stream fillers.

Must stay bit-compatible with _xoshiro_py: the state transition is exact
integer arithmetic and the uint64 -> double conversion ((x >> 11) * 2^-53)
is exact in both backends, so downstream float math sees identical inputs.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef unsigned long long u64

cdef inline u64 _rotl(u64 x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef double _INV53 = 1.0 / 9007199254740992.0  # 2^-53


def fill_uint64(cnp.uint64_t[::1] state, cnp.uint64_t[::1] out):
    cdef u64 s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef u64 r, t
    cdef Py_ssize_t i, n = out.shape[0]
    for i in range(n):
        r = _rotl(s1 * 5UL, 7) * 9UL
        t = s1 << 17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        out[i] = r
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3


def fill_uniform(cnp.uint64_t[::1] state, cnp.float64_t[::1] out):
    """Doubles in [0, 1) with 53-bit resolution."""
    cdef u64 s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef u64 r, t
    cdef Py_ssize_t i, n = out.shape[0]
    for i in range(n):
        r = _rotl(s1 * 5UL, 7) * 9UL
        t = s1 << 17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        out[i] = <double> (r >> 11) * _INV53
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
