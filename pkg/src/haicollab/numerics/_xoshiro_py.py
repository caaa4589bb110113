"""Pure-Python xoshiro256** stream fillers (fallback for the compiled kernel).

Bit-compatible with _xoshiro.pyx: integer state transitions are exact and the
uint64 -> double conversion is exact, so both backends emit identical streams.
"""

import numpy as np

_MASK = (1 << 64) - 1
_INV53 = 2.0 ** -53


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def fill_uint64(state: np.ndarray, out: np.ndarray) -> None:
    s0, s1, s2, s3 = (int(v) for v in state)
    buf = out
    for i in range(out.shape[0]):
        r = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        buf[i] = r
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


def fill_uniform(state: np.ndarray, out: np.ndarray) -> None:
    s0, s1, s2, s3 = (int(v) for v in state)
    buf = out
    for i in range(out.shape[0]):
        r = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        buf[i] = (r >> 11) * _INV53
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3
