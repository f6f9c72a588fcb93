"""Dense float64 numerics: activations, affine maps, seeded initialization.

Conventions used everywhere in this package:

* a "matrix" is a 2-D row-major (C-order) float64 numpy array,
* a "vector" is a 1-D float64 numpy array,
* operations accept an optional leading batch axis (the feature axis is
  always the last one) and never emit NaN/Inf from finite input.

The random generator is counter-based (a splitmix64 finalizer applied to
seed + k * gamma), so streams are bit-reproducible across platforms and
can be split into independent child streams without shared state.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInputError, ShapeError

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_DOUBLE_SCALE = float(2.0**-53)


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{what} contains non-finite values")


def _as_float_array(x, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    _require_finite(arr, what)
    return arr


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps mod 2^64 by design
    z = x.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


class Rng:
    """Deterministic, splittable counter-based random generator.

    Output k of a stream with seed s is ``mix64(s + (k+1)*gamma)`` where
    mix64 is the splitmix64 finalizer. Identical seeds give identical
    streams; ``split`` derives an independent child stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._counter = 0

    def _next_raw(self, n: int) -> np.ndarray:
        base = self._counter + 1
        self._counter += n
        idx = np.arange(base, base + n, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + idx * _GAMMA)

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform float64 draws in [low, high)."""
        if shape is None:
            shape = ()
        n = int(np.prod(shape)) if shape != () else 1
        u = (self._next_raw(n) >> np.uint64(11)).astype(np.float64) * _DOUBLE_SCALE
        out = low + (high - low) * u
        return out.reshape(shape) if shape != () else float(out[0])

    def integers(self, bound: int, shape=None) -> np.ndarray:
        """Uniform integers in [0, bound). Negligible modulo bias for bound << 2^64."""
        if bound < 1:
            raise InvalidInputError("integer bound must be >= 1")
        if shape is None:
            return int(self._next_raw(1)[0] % np.uint64(bound))
        n = int(np.prod(shape))
        return (self._next_raw(n) % np.uint64(bound)).astype(np.int64).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n) (argsort of iid uniform keys)."""
        if n == 0:
            return np.empty(0, dtype=np.int64)
        return np.argsort(self.uniform((n,)), kind="stable").astype(np.int64)

    def split(self) -> "Rng":
        """Derive an independent child stream, advancing this one."""
        return Rng(int(self._next_raw(1)[0]))

    def child(self, *tags: int) -> "Rng":
        """Derive a child stream from integer tags without advancing this one.

        Deterministic in (seed, tags); used for e.g. per-epoch shuffles so a
        resumed run reproduces the same order without serializing counters.
        """
        key = np.uint64(self.seed)
        with np.errstate(over="ignore"):
            for t in tags:
                key = _mix64(np.uint64([key ^ (np.uint64(int(t) & 0xFFFFFFFFFFFFFFFF) + _GAMMA)]))[0]
        return Rng(int(key))


def sigmoid(x) -> np.ndarray:
    """Elementwise logistic function 1/(1+exp(-x)).

    Computed in the split form (separate branches for the sign of x) so
    exp never overflows.
    """
    arr = _as_float_array(x, "sigmoid input")
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh_act(x) -> np.ndarray:
    """Elementwise hyperbolic tangent."""
    return np.tanh(_as_float_array(x, "tanh input"))


def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """W @ x + b with x of shape (..., W.cols); returns shape (..., W.rows)."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"affine expects 2-D W and 1-D b, got {W.ndim}-D / {b.ndim}-D")
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"affine: W is {W.shape}, x has feature dim {x.shape[-1]}")
    if W.shape[0] != b.shape[0]:
        raise ShapeError(f"affine: W has {W.shape[0]} rows, b has length {b.shape[0]}")
    return x @ W.T + b


def glorot_init(rows: int, cols: int, rng: Rng) -> np.ndarray:
    """Uniform init in +-sqrt(6/(rows+cols)); deterministic given the rng seed."""
    if rows < 1 or cols < 1:
        raise InvalidInputError(f"glorot_init needs positive dims, got {rows}x{cols}")
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform((rows, cols), -limit, limit)
