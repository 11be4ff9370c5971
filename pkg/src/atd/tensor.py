"""Dense tensor storage, mode unfolding, batching and the ``.dtz`` file format.

Layout is row-major (last index fastest).  Modes are 0-based, like numpy axes.
The mode-``m`` unfolding keeps the remaining modes in their original order, so
that ``unfold(kruskal(U0, U1, U2), 0) == U0 @ khatri_rao([U1, U2]).T``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"ATD1"
_MAX_ORDER = 255
_MAX_EXTENT = 2**32 - 1


class TensorFormatError(ValueError):
    """Raised when a ``.dtz`` file cannot be decoded."""


class DenseTensor:
    """Immutable order-N array of finite float64 values.

    The wrapped array is stored C-contiguous and flagged read-only.  Numpy
    functions accept a ``DenseTensor`` directly through ``__array__``.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if arr.ndim < 1:
            raise ValueError("a tensor needs order >= 1")
        if any(n < 1 for n in arr.shape):
            raise ValueError(f"all extents must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        arr.flags.writeable = False
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def order(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None or np.dtype(dtype) == self._data.dtype:
            return self._data
        return self._data.astype(dtype)

    def __getitem__(self, key):
        return self._data[key]

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self):
        return f"DenseTensor(shape={self.shape})"


def as_array(t) -> np.ndarray:
    """Return the float64 array behind ``t`` without copying when possible."""
    if isinstance(t, DenseTensor):
        return t.data
    return np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class TensorBatch:
    """A subset of samples (first-mode slices) of a parent tensor."""

    indices: np.ndarray
    tensor: np.ndarray

    @property
    def size(self) -> int:
        return len(self.indices)


def _check_mode(order: int, mode: int) -> None:
    if not 0 <= mode < order:
        raise ValueError(f"mode {mode} out of range for an order-{order} tensor")


def unfold(t, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization, shape ``(extent(mode), prod(other extents))``."""
    arr = as_array(t)
    _check_mode(arr.ndim, mode)
    return np.moveaxis(arr, mode, 0).reshape(arr.shape[mode], -1)


def fold(mat, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    shape = tuple(int(n) for n in shape)
    _check_mode(len(shape), mode)
    moved = (shape[mode],) + shape[:mode] + shape[mode + 1:]
    return np.moveaxis(np.asarray(mat, dtype=np.float64).reshape(moved), 0, mode)


def frobenius_norm_sq(t) -> float:
    arr = as_array(t)
    return float(np.vdot(arr, arr))


def split_batches(t, b: int, seed: int | None = None) -> list[TensorBatch]:
    """Partition the samples (mode 0) of ``t`` into batches of size ``b``.

    With ``seed=None`` the natural order is kept; otherwise the sample
    indices are permuted by ``numpy.random.default_rng(seed)``.  The last
    batch holds the remainder and may be smaller than ``b``.
    """
    if b < 1:
        raise ValueError("batch size must be >= 1")
    arr = as_array(t)
    n = arr.shape[0]
    order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    return [
        TensorBatch(indices=order[i:i + b], tensor=arr[order[i:i + b]])
        for i in range(0, n, b)
    ]


def write_tensor(t, path) -> None:
    """Write ``t`` as ``ATD1 | u8 order | u32 extents (LE) | f64 payload (LE)``."""
    arr = as_array(t)
    if arr.ndim > _MAX_ORDER:
        raise ValueError("order does not fit in one byte")
    if any(n > _MAX_EXTENT for n in arr.shape):
        raise ValueError("extent does not fit in u32")
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite values")
    header = MAGIC + struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path) -> DenseTensor:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 5:
        raise TensorFormatError(f"{path}: truncated header")
    order = raw[4]
    if order < 1:
        raise TensorFormatError(f"{path}: order must be >= 1")
    end = 5 + 4 * order
    if len(raw) < end:
        raise TensorFormatError(f"{path}: truncated header")
    shape = struct.unpack(f"<{order}I", raw[5:end])
    if any(n == 0 for n in shape):
        raise TensorFormatError(f"{path}: zero extent in {shape}")
    count = math.prod(shape)
    if count * 8 > len(raw) - end:
        # catches both truncated payloads and absurd extents before allocating
        raise TensorFormatError(f"{path}: payload holds {len(raw) - end} bytes, need {count * 8}")
    if count * 8 != len(raw) - end:
        raise TensorFormatError(f"{path}: trailing bytes after payload")
    arr = np.frombuffer(raw, dtype="<f8", count=count, offset=end).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError(f"{path}: non-finite values in payload")
    return DenseTensor(arr)
