"""Explicit allocation accounting for solver working sets.

The solver registers every array it stages for a step (batch copies,
augmented copies, coefficient matrices, kernel scratch).  ``peak`` is the
largest number of live bytes observed, which is what the batch-size
benchmarks compare.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class AllocationTracker:
    def __init__(self):
        self.live = 0
        self.peak = 0

    def acquire(self, *arrays: np.ndarray) -> None:
        self.live += sum(a.nbytes for a in arrays if a is not None)
        self.peak = max(self.peak, self.live)

    def release(self, *arrays: np.ndarray) -> None:
        self.live -= sum(a.nbytes for a in arrays if a is not None)

    @contextmanager
    def hold(self, *arrays: np.ndarray):
        self.acquire(*arrays)
        try:
            yield
        finally:
            self.release(*arrays)

    def reset_peak(self) -> None:
        self.peak = self.live


class _NullTracker(AllocationTracker):
    def acquire(self, *arrays):
        pass

    def release(self, *arrays):
        pass


NULL_TRACKER = _NullTracker()
