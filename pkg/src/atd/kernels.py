"""Khatri-Rao products, Gram/Hadamard systems, MTTKRP and ridge solves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
import scipy.linalg

from .memory import NULL_TRACKER, AllocationTracker
from .tensor import as_array


class SingularSystemError(np.linalg.LinAlgError):
    """The normal-equation matrix is not positive definite."""


def _check_rank(factors: Sequence[np.ndarray]) -> int:
    ranks = {np.shape(f)[1] for f in factors}
    if len(ranks) != 1:
        raise ValueError(f"factor ranks disagree: {sorted(ranks)}")
    return ranks.pop()


def khatri_rao(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product; the last factor's row index runs fastest."""
    factors = [np.asarray(f, dtype=np.float64) for f in factors]
    rank = _check_rank(factors)
    out = factors[0]
    for f in factors[1:]:
        out = (out[:, None, :] * f[None, :, :]).reshape(-1, rank)
    return out


def gram(f: np.ndarray) -> np.ndarray:
    g = f.T @ f
    # exact symmetry: (a + b) and (b + a) round identically
    return (g + g.T) * 0.5


def hadamard_gram(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Hadamard product of the factor Grams, i.e. ``KR(factors).T @ KR(factors)``."""
    _check_rank(factors)
    out = gram(np.asarray(factors[0], dtype=np.float64))
    for f in factors[1:]:
        out = out * gram(np.asarray(f, dtype=np.float64))
    return out


@dataclass(frozen=True)
class GramStack:
    """Normal-equation matrix ``hadamard + alpha * I`` of a CP ridge problem."""

    hadamard: np.ndarray
    alpha: float

    @classmethod
    def from_factors(cls, factors: Sequence[np.ndarray], alpha: float) -> "GramStack":
        return cls(hadamard_gram(factors), float(alpha))

    @property
    def rank(self) -> int:
        return self.hadamard.shape[0]

    def system(self) -> np.ndarray:
        return self.hadamard + self.alpha * np.eye(self.rank)


def ridge_solve(rhs: np.ndarray, gram_stack: GramStack) -> np.ndarray:
    """Solve ``X @ (H + alpha I) = rhs`` by Cholesky factorization.

    Raises
    ------
    SingularSystemError
        If the system matrix is not numerically positive definite.  There is
        no pivoting fallback; use ``alpha > 0``.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    system = gram_stack.system()
    try:
        factor = scipy.linalg.cho_factor(system, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"normal equations are not positive definite (alpha={gram_stack.alpha})"
        ) from exc
    return scipy.linalg.cho_solve(factor, rhs.T, check_finite=False).T


@numba.njit(cache=True)
def _mttkrp_stream(data, shape, factors, target, out, idx, prefix, fiber):
    # Walks the tensor fiber by fiber along the last mode.  ``prefix[k]`` holds
    # the Hadamard product of the factor rows selected by idx[0..k] (target
    # mode skipped), refreshed only from the lowest odometer digit that moved.
    d = shape.shape[0]
    last = d - 1
    rank = out.shape[1]
    length = shape[last]
    n_outer = 1
    for k in range(last):
        n_outer *= shape[k]
    for k in range(last):
        idx[k] = 0
    changed = 0
    for outer in range(n_outer):
        for k in range(changed, last):
            for r in range(rank):
                p = 1.0 if k == 0 else prefix[k - 1, r]
                if k != target:
                    p *= factors[k][idx[k], r]
                prefix[k, r] = p
        base = outer * length
        if target == last:
            for i in range(length):
                v = data[base + i]
                for r in range(rank):
                    out[i, r] += v * prefix[last - 1, r]
        else:
            for r in range(rank):
                fiber[r] = 0.0
            f_last = factors[last]
            for i in range(length):
                v = data[base + i]
                for r in range(rank):
                    fiber[r] += v * f_last[i, r]
            row = idx[target]
            for r in range(rank):
                out[row, r] += fiber[r] * prefix[last - 1, r]
        # advance the odometer over modes 0..last-1
        k = last - 1
        while k >= 0:
            idx[k] += 1
            if idx[k] < shape[k]:
                break
            idx[k] = 0
            k -= 1
        changed = max(k, 0)


def mttkrp(t, factors: Sequence[np.ndarray | None], target_mode: int,
           tracker: AllocationTracker = NULL_TRACKER) -> np.ndarray:
    """Matricized tensor times Khatri-Rao product.

    Computes ``unfold(t, target_mode) @ khatri_rao(others)`` by streaming over
    the tensor once, so the Khatri-Rao matrix is never formed.  ``factors``
    is either one entry per mode (the target entry is ignored and may be
    ``None``) or one entry per non-target mode.

    Auxiliary memory is ``order * R`` prefix products plus one length-``R``
    fiber accumulator, on top of the ``(extent(target_mode), R)`` output.
    """
    arr = np.ascontiguousarray(as_array(t))
    d = arr.ndim
    if d < 2:
        raise ValueError("mttkrp needs a tensor of order >= 2")
    if not 0 <= target_mode < d:
        raise ValueError(f"target mode {target_mode} out of range for order {d}")
    factors = list(factors)
    if len(factors) == d - 1:
        factors.insert(target_mode, None)
    if len(factors) != d:
        raise ValueError(f"expected {d - 1} or {d} factors, got {len(factors)}")
    others = [np.asarray(f, dtype=np.float64) for k, f in enumerate(factors) if k != target_mode]
    rank = _check_rank(others)
    for k, f in enumerate(factors):
        if k != target_mode and np.shape(f)[0] != arr.shape[k]:
            raise ValueError(f"factor {k} has {np.shape(f)[0]} rows, mode extent is {arr.shape[k]}")

    placeholder = np.zeros((1, rank))
    blocks = tuple(placeholder if k == target_mode
                   else np.ascontiguousarray(f, dtype=np.float64)
                   for k, f in enumerate(factors))

    out = np.zeros((arr.shape[target_mode], rank))
    idx = np.zeros(d, dtype=np.int64)
    prefix = np.zeros((d, rank))
    fiber = np.zeros(rank)
    with tracker.hold(out, idx, prefix, fiber):
        _mttkrp_stream(arr.reshape(-1), np.asarray(arr.shape, dtype=np.int64), blocks,
                       target_mode, out, idx, prefix, fiber)
    return out


def mttkrp_aux_bound(shape: Sequence[int], rank: int) -> int:
    """Byte budget for one :func:`mttkrp` call's scratch (excluding output)."""
    return 8 * (max(shape) * rank + rank * rank)


def kruskal_reconstruct(weights, factors: Sequence[np.ndarray]) -> np.ndarray:
    """Sum of rank-one terms.

    ``weights`` may be ``None`` (unit weights, tensor over ``factors``), a
    length-R vector (one sample, same shape) or an ``(N, R)`` coefficient
    matrix, which adds a leading sample mode.
    """
    factors = [np.asarray(f, dtype=np.float64) for f in factors]
    rank = _check_rank(factors)
    shape = tuple(f.shape[0] for f in factors)
    kr = khatri_rao(factors)
    if weights is None:
        return kr.sum(axis=1).reshape(shape)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[-1] != rank:
        raise ValueError(f"weights have rank {w.shape[-1]}, factors have rank {rank}")
    if w.ndim == 1:
        return (kr @ w).reshape(shape)
    return (w @ kr.T).reshape((w.shape[0],) + shape)


def kruskal_norm_sq(weights, factors: Sequence[np.ndarray]) -> float:
    """``||[[weights; factors]]||_F^2`` from the Gram matrices alone."""
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    return float(np.sum(hadamard_gram([w] + list(factors))))
