"""Dense float tensors backing every layer computation.

A ``Tensor`` wraps a C-contiguous numpy array that is frozen on
construction: kernels never mutate their operands, they return fresh
tensors. float32 is the working precision for models and training;
float64 is supported so finite-difference gradient checks can run the
same code paths at higher precision.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

_ALLOWED_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand dimensions do not fit an operation's contract."""


def _check_dtype(dtype: np.dtype) -> np.dtype:
    dt = np.dtype(dtype)
    if dt.type not in _ALLOWED_DTYPES:
        raise TypeError(f"tensor dtype must be float32 or float64, got {dt}")
    return dt


class Tensor:
    """Immutable N-dimensional float array with C (row-major) layout."""

    __slots__ = ("_data",)

    def __init__(self, data, dtype=None):
        if isinstance(data, Tensor):
            data = data._data
        if dtype is None:
            src = np.asarray(data)
            dtype = src.dtype if src.dtype.type in _ALLOWED_DTYPES else np.float32
        dt = _check_dtype(dtype)
        arr = np.array(data, dtype=dt, order="C", copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(extent < 1 for extent in arr.shape):
            raise ShapeError(f"tensor extents must be >= 1, got shape {arr.shape}")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Takes ownership of a freshly computed array: no copy, just freeze.
        t = object.__new__(cls)
        _check_dtype(arr.dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if any(extent < 1 for extent in arr.shape):
            raise ShapeError(f"tensor extents must be >= 1, got shape {arr.shape}")
        arr.setflags(write=False)
        t._data = arr
        return t

    @classmethod
    def zeros(cls, shape: Iterable[int], dtype=np.float32) -> "Tensor":
        return cls._wrap(np.zeros(tuple(shape), dtype=_check_dtype(dtype)))

    @classmethod
    def full(cls, shape: Iterable[int], value: float, dtype=np.float32) -> "Tensor":
        return cls._wrap(np.full(tuple(shape), value, dtype=_check_dtype(dtype)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        """The backing array itself; it is read-only."""
        return self._data

    def astype(self, dtype) -> "Tensor":
        return Tensor._wrap(self._data.astype(_check_dtype(dtype)))

    def reshape(self, shape: Iterable[int]) -> "Tensor":
        target = tuple(shape)
        if int(np.prod(target)) != self._data.size:
            raise ShapeError(f"cannot reshape {self.shape} ({self._data.size} elements) to {target}")
        return Tensor._wrap(self._data.reshape(target).copy())

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() needs exactly one element, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def tolist(self):
        return self._data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self._data.dtype.name})"
