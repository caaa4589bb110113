"""Seeded xoshiro256** random streams.

Every stochastic operation in the package takes an explicit Rng handle; there
is no global generator. Identical seeds give identical streams, regardless of
whether the compiled or the pure backend is active (the backends are
bit-compatible, and all float transforms downstream of the raw uniforms run
in shared numpy code).
"""

from __future__ import annotations

import os

import numpy as np

if os.environ.get("HAICOLLAB_PURE_PYTHON"):
    from . import _xoshiro_py as _backend

    COMPILED = False
else:
    try:
        from . import _xoshiro as _backend  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        from . import _xoshiro_py as _backend  # type: ignore[no-redef]

        COMPILED = False


def backend_name() -> str:
    return "compiled" if COMPILED else "pure-python"


_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(z: int) -> tuple[int, int]:
    """One splitmix64 step: returns (output, advanced state)."""
    z = (z + _GOLDEN) & _MASK
    x = z
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31), z


def derive_seed(master: int, *path: int) -> int:
    """Stable child seed for a (master seed, run identifiers...) path.

    Used to hand independent, reproducible streams to sweep/ablation runs;
    the result depends only on the values, not on execution order.
    """
    s = master & _MASK
    for p in path:
        mixed, _ = _splitmix64(p & _MASK)
        s, _ = _splitmix64(s ^ mixed)
    return s


def float_key(x: float) -> int:
    """Bit pattern of a float, for seed derivation keyed by a hyperparameter."""
    return int(np.float64(x).view(np.uint64))


class Rng:
    """xoshiro256** generator with bulk fill methods.

    State is seeded from a 64-bit integer via splitmix64, per the reference
    initialisation. splitmix64 output can never be all-zero across four
    consecutive draws, so the xoshiro state is always valid.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._state = np.empty(4, dtype=np.uint64)
        z = self.seed
        for i in range(4):
            out, z = _splitmix64(z)
            self._state[i] = out

    def spawn(self, *path: int) -> "Rng":
        """Independent child stream; deterministic in (self.seed, path)."""
        return Rng(derive_seed(self.seed, *path))

    def uint64(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        _backend.fill_uint64(self._state, out)
        return out

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1), 53-bit resolution."""
        out = np.empty(n, dtype=np.float64)
        _backend.fill_uniform(self._state, out)
        return out

    def uniform2d(self, rows: int, cols: int) -> np.ndarray:
        return self.uniform(rows * cols).reshape(rows, cols)

    def gumbel(self, shape: int | tuple[int, ...]) -> np.ndarray:
        """Standard Gumbel(0,1) draws via -log(-log(U)), eps-guarded at U=0."""
        n = int(np.prod(shape))
        u = self.uniform(n)
        g = -np.log(-np.log(u + 1e-20) + 1e-20)
        return g.reshape(shape)

    def normal(self, shape: int | tuple[int, ...]) -> np.ndarray:
        """Standard normals via Box-Muller (two uniforms per draw)."""
        n = int(np.prod(shape))
        u1 = self.uniform(n)
        u2 = self.uniform(n)
        r = np.sqrt(-2.0 * np.log(u1 + 1e-300))
        z = r * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape)

    def integers(self, n: int, high: int) -> np.ndarray:
        """n ints uniform on [0, high)."""
        if high <= 0:
            raise ValueError("high must be positive")
        vals = np.floor(self.uniform(n) * high).astype(np.int64)
        return np.minimum(vals, high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of range(n) (argsort of uniform keys)."""
        return np.argsort(self.uniform(n), kind="stable")

    def permutation_rows(self, rows: int, cols: int) -> np.ndarray:
        """rows independent uniform permutations of range(cols)."""
        return np.argsort(self.uniform2d(rows, cols), axis=1, kind="stable")

    def choice(self, high: int) -> int:
        return int(self.integers(1, high)[0])
