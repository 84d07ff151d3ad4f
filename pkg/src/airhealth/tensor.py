"""Dense float64 tensor type and seeded randomness helpers.

All numerical code in the package trades in `Tensor`: a row-major,
64-bit-float array with an explicit shape. It is a thin value wrapper
around a numpy array; the wrapped array is reachable as `.array` for
arithmetic-heavy internals.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

__all__ = ["Tensor", "as_array", "seeded_rng", "derive_rng"]


class Tensor:
    """Row-major array of float64 with explicit shape.

    Invariant: product(shape) == len(data). Construction copies the
    input, so instances can be shared freely across threads.
    """

    __slots__ = ("array",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        arr = np.array(values, dtype=np.float64, order="C")
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if any(s <= 0 for s in shape):
                raise DimensionError(f"shape entries must be positive, got {shape}")
            expected = int(np.prod(shape))
            if arr.size != expected:
                raise DimensionError(
                    f"cannot reshape {arr.size} values into {shape} "
                    f"({expected} required)"
                )
            arr = arr.reshape(shape)
        self.array = np.ascontiguousarray(arr)

    @classmethod
    def zeros(cls, *shape: int) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64))

    @classmethod
    def ones(cls, *shape: int) -> "Tensor":
        return cls(np.ones(shape, dtype=np.float64))

    @classmethod
    def from_flat(cls, shape: Sequence[int], data: Iterable[float]) -> "Tensor":
        return cls(list(data), shape=shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def ndim(self) -> int:
        return self.array.ndim

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def data(self) -> list[float]:
        """Flat row-major copy of the values."""
        return self.array.reshape(-1).tolist()

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.array).all())

    def copy(self) -> "Tensor":
        return Tensor(self.array)

    def tolist(self):
        return self.array.tolist()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(
            np.array_equal(self.array, other.array)
        )

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_array(values, ndim: int | None = None, name: str = "input") -> np.ndarray:
    """Coerce Tensor / ndarray / nested sequences to a float64 ndarray."""
    if isinstance(values, Tensor):
        arr = values.array
    else:
        arr = np.asarray(values, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(
            f"{name} must be {ndim}-dimensional, got shape {arr.shape}"
        )
    return arr


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic generator; the only randomness source in the package."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent stream for (seed, keys), stable across schedules.

    Used where work is split per class / per pair so results do not
    depend on execution order.
    """
    digest = hashlib.sha256(repr(tuple(keys)).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *words])))
