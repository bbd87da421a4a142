"""Dense row-major tensors and the seeded generator used everywhere else.

Tensors are plain contiguous ``numpy.ndarray`` objects.  The engine runs in
float32; float64 is accepted by every kernel so gradients can be checked with
finite differences.  No broadcasting is performed by the helpers here: shapes
must agree exactly.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"extents must all be >= 1, got {shape}")
    return shape


def create(shape: Sequence[int], fill: float | Iterable[float] = 0.0, dtype=DTYPE) -> np.ndarray:
    """Build a tensor of ``shape`` filled with a scalar or a flat row-major value list."""
    shape = _check_shape(shape)
    if np.isscalar(fill):
        return np.full(shape, fill, dtype=dtype)
    values = np.asarray(list(fill), dtype=dtype)
    if values.size != int(np.prod(shape)):
        raise ShapeError(f"{values.size} values cannot fill shape {shape}")
    return np.ascontiguousarray(values.reshape(shape))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


_ELEMENTWISE = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(a: np.ndarray, b: np.ndarray, kind: str) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {kind} on {a.shape} and {b.shape}")
    try:
        op = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return op(a, b)


_REDUCE = {"sum": np.sum, "mean": np.mean, "max": np.max}


def reduce(a: np.ndarray, axes: Sequence[int], kind: str) -> np.ndarray:
    """Reduce over ``axes``, removing them from the shape."""
    axes = tuple(int(ax) for ax in axes)
    if len(set(axes)) != len(axes) or any(not 0 <= ax < a.ndim for ax in axes):
        raise ValueError(f"invalid axes {axes} for rank {a.ndim}")
    try:
        op = _REDUCE[kind]
    except KeyError:
        raise ValueError(f"unknown reduction {kind!r}") from None
    return np.asarray(op(a, axis=axes), dtype=a.dtype)


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministically derive an independent 64-bit seed from ``seed`` and integer keys."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class Prng:
    """Seeded generator: numpy's PCG64 bit generator seeded through ``SeedSequence``.

    PCG64's output stream is fixed by its published algorithm, so equal seeds
    give identical sequences on every platform.  Uniforms come from the top
    bits of each 64-bit draw; normals use Box-Muller on pairs of uniforms.
    Not thread-safe: one owner per instance.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def uniform(self, shape: Sequence[int], lo: float = 0.0, hi: float = 1.0, dtype=DTYPE) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform range requires lo < hi, got [{lo}, {hi})")
        shape = _check_shape(shape)
        u = self._gen.random(shape, dtype=np.float64)
        out = (lo + (hi - lo) * u).astype(dtype)
        # rounding to the target dtype may land on hi
        return np.minimum(out, np.nextafter(dtype(hi), dtype(lo)))

    def normal(self, shape: Sequence[int], dtype=DTYPE) -> np.ndarray:
        shape = _check_shape(shape)
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1]
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return z.reshape(shape).astype(dtype)

    def integers(self, high: int, size: int | None = None):
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, *keys: int) -> "Prng":
        return Prng(derive_seed(self.seed, *keys))


def prng_uniform(p: Prng, shape: Sequence[int], lo: float, hi: float) -> np.ndarray:
    return p.uniform(shape, lo, hi)
