"""Dense tensors with exact live/peak byte accounting.

Every :class:`Tensor` that owns its payload charges ``element_count *
bytes_per_element`` to an :class:`AllocationTracker` when it is allocated and
refunds the same amount when it is freed (explicitly via :meth:`Tensor.free`
or when it is garbage collected). Only payload bytes are counted; numpy
temporaries created inside an op are not.

Example::

    >>> tr = AllocationTracker()
    >>> with use_tracker(tr):
    ...     t = alloc([2, 3], "f32")
    >>> tr.live_bytes
    24
    >>> t.free(); tr.live_bytes
    0
"""

from __future__ import annotations

import contextlib
import math
import threading
import weakref
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidShapeError, NumericalDegeneracyError, OutOfMemoryError

PRECISIONS = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}
BYTES_PER_ELEMENT = {"f32": 4, "f64": 8}
MAX_RANK = 4


def precision_of(dtype) -> str:
    dtype = np.dtype(dtype)
    for name, dt in PRECISIONS.items():
        if dt == dtype:
            return name
    raise InvalidShapeError(f"unsupported dtype {dtype}")


def check_precision(precision: str) -> str:
    if precision not in PRECISIONS:
        raise InvalidShapeError(f"precision must be one of {sorted(PRECISIONS)}, got {precision!r}")
    return precision


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not 1 <= len(shape) <= MAX_RANK:
        raise InvalidShapeError(f"rank must be in [1, {MAX_RANK}], got shape {shape}")
    if any(s < 1 for s in shape):
        raise InvalidShapeError(f"all extents must be >= 1, got shape {shape}")
    return shape


def nbytes_for(shape: Sequence[int], precision: str = "f32") -> int:
    """Payload bytes a tensor of ``shape`` would occupy. Nothing is allocated."""
    return math.prod(check_shape(shape)) * BYTES_PER_ELEMENT[check_precision(precision)]


class AllocationTracker:
    """Process-wide live/peak byte counter.

    ``ceiling_bytes`` simulates a device memory limit: an allocation that
    would push ``live_bytes`` above it raises :class:`OutOfMemoryError`.
    Updates are serialized with a lock so worker threads can share one
    tracker.
    """

    def __init__(self, ceiling_bytes: int | None = None, enabled: bool = True):
        self.ceiling_bytes = ceiling_bytes
        self.enabled = enabled
        self._live = 0
        self._peak = 0
        self._lock = threading.Lock()

    @property
    def live_bytes(self) -> int:
        return self._live

    @property
    def peak_bytes(self) -> int:
        return self._peak

    def reset(self) -> None:
        """Start a new peak window at the current live level."""
        with self._lock:
            self._peak = self._live

    def _acquire(self, nbytes: int, name: str | None) -> bool:
        if not self.enabled:
            return False
        with self._lock:
            if self.ceiling_bytes is not None and self._live + nbytes > self.ceiling_bytes:
                raise OutOfMemoryError(name, nbytes, self._live, self.ceiling_bytes)
            self._live += nbytes
            if self._live > self._peak:
                self._peak = self._live
        return True

    def _release(self, nbytes: int) -> None:
        with self._lock:
            self._live -= nbytes

    def __repr__(self):
        return (
            f"AllocationTracker(live_bytes={self._live}, peak_bytes={self._peak}, "
            f"ceiling_bytes={self.ceiling_bytes})"
        )


_default_tracker = AllocationTracker()
_current_tracker = _default_tracker


def get_tracker() -> AllocationTracker:
    return _current_tracker


@contextlib.contextmanager
def use_tracker(tracker: AllocationTracker) -> Iterator[AllocationTracker]:
    """Route allocations made inside the block to ``tracker``.

    The setting is global rather than thread-local so that worker threads
    spawned inside the block charge the same tracker.
    """
    global _current_tracker
    previous = _current_tracker
    _current_tracker = tracker
    try:
        yield tracker
    finally:
        _current_tracker = previous


class Tensor:
    """Row-major contiguous array of rank 1-4 in f32 or f64.

    Construct with :func:`alloc` or :meth:`Tensor.from_array`; the bare
    constructor is internal. ``data`` is the underlying ``numpy.ndarray``.
    A tensor obtained from :meth:`select` borrows its parent's payload and is
    not charged to the tracker.
    """

    __slots__ = ("data", "name", "nbytes", "_finalizer", "__weakref__")

    def __init__(self, data: np.ndarray, name: str | None = None, charged_to: AllocationTracker | None = None):
        self.data = data
        self.name = name
        self.nbytes = int(data.nbytes)
        if charged_to is not None:
            self._finalizer = weakref.finalize(self, charged_to._release, self.nbytes)
        else:
            self._finalizer = None

    @classmethod
    def from_array(cls, array, precision: str | None = None, name: str | None = None) -> "Tensor":
        array = np.asarray(array)
        if precision is None:
            precision = precision_of(array.dtype) if array.dtype in PRECISIONS.values() else "f64"
        out = alloc(array.shape, precision, name=name)
        out.data[...] = array
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def precision(self) -> str:
        return precision_of(self.data.dtype)

    @property
    def owned(self) -> bool:
        return self._finalizer is not None

    @property
    def alive(self) -> bool:
        return self.data is not None

    def select(self, index: int) -> "Tensor":
        """Borrowed, uncharged view of ``self[index]`` along the first axis."""
        if self.data.ndim < 2:
            raise InvalidShapeError("select needs a tensor of rank >= 2")
        return Tensor(self.data[index], name=self.name)

    def free(self) -> None:
        """Release the payload. Idempotent."""
        if self._finalizer is not None:
            self._finalizer()
        self.data = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        state = "" if self.alive else ", freed"
        return f"Tensor(shape={list(self.shape) if self.alive else None}, name={self.name!r}{state})"


def free(*tensors: Tensor | None) -> None:
    for t in tensors:
        if t is not None:
            t.free()


def alloc(shape: Sequence[int], precision: str = "f32", name: str | None = None) -> Tensor:
    """Zero-initialized tracked tensor."""
    shape = check_shape(shape)
    precision = check_precision(precision)
    nbytes = math.prod(shape) * BYTES_PER_ELEMENT[precision]
    tracker = get_tracker()
    charged = tracker._acquire(nbytes, name)
    try:
        data = np.zeros(shape, dtype=PRECISIONS[precision])
    except MemoryError:
        if charged:
            tracker._release(nbytes)
        raise OutOfMemoryError(name, nbytes, tracker.live_bytes, tracker.ceiling_bytes)
    return Tensor(data, name=name, charged_to=tracker if charged else None)


def matmul(a: Tensor, b: Tensor, name: str | None = None) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise InvalidShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise InvalidShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    if a.precision != b.precision:
        raise InvalidShapeError(f"precision mismatch: {a.precision} vs {b.precision}")
    out = alloc([a.shape[0], b.shape[1]], a.precision, name=name)
    np.matmul(a.data, b.data, out=out.data)
    if not np.isfinite(out.data).all():
        out.free()
        raise NumericalDegeneracyError("matmul produced non-finite values")
    return out


def logsumexp_last(t: Tensor, name: str | None = None) -> Tensor:
    """Max-shifted log-sum-exp over the last axis.

    A rank-1 input yields a rank-1 tensor of one element.
    """
    x = t.data
    out_shape = x.shape[:-1] or (1,)
    out = alloc(out_shape, t.precision, name=name)
    m = x.max(axis=-1, keepdims=True)
    s = np.exp(x - m).sum(axis=-1)
    out.data[...] = (m[..., 0] + np.log(s)).reshape(out_shape)
    return out


def crop(t: Tensor, lengths: Sequence[int], name: str | None = None) -> Tensor:
    """Copy of the leading ``lengths`` hyper-rectangle of ``t``."""
    lengths = tuple(int(n) for n in lengths)
    if len(lengths) != t.data.ndim:
        raise InvalidShapeError(f"need {t.data.ndim} prefix lengths, got {len(lengths)}")
    for n, extent in zip(lengths, t.shape):
        if not 1 <= n <= extent:
            raise InvalidShapeError(f"prefix {lengths} does not fit shape {t.shape}")
    out = alloc(lengths, t.precision, name=name or t.name)
    out.data[...] = t.data[tuple(slice(0, n) for n in lengths)]
    return out
