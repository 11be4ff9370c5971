"""Loss terms of the augmented decomposition objective.

The total objective on a tensor ``T`` and its augmented copy ``Ta`` is::

    ||T - [[X; A, B, C]]||^2 + ||Ta - [[Xa; A, B, C]]||^2           (fit)
    + alpha * (||X||^2 + ||Xa||^2 + ||A||^2 + ||B||^2 + ||C||^2)     (ridge)
    + beta * trace(X' D(X) G(gamma) D(Xa) Xa)                       (alignment)

``D(Y)`` scales each row of ``Y`` to unit length and ``G(gamma)`` weighs
non-corresponding row pairs by ``(gamma+1)/(N(N-1))`` and corresponding pairs
by ``-1/N``.  ``G`` is only ever applied in streaming form here; the dense
matrix lives in :mod:`atd.oracle`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernels import kruskal_reconstruct
from .tensor import as_array

ROW_NORM_FLOOR = 1e-12


class ZeroNormRowError(ValueError):
    """A coefficient row is too short to be cosine-normalized."""


@dataclass(frozen=True)
class SsLossParams:
    gamma: float
    beta: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True)
class BoundConstants:
    rates: tuple[float, ...]
    lam: float
    c1: float
    c2: float


def _residual_sq(t, x, factors, chunk: int = 256) -> float:
    arr = as_array(t)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if arr.ndim == len(factors):
        arr = arr[None]
    if x.shape[0] != arr.shape[0]:
        raise ValueError(f"{x.shape[0]} coefficient rows for {arr.shape[0]} samples")
    if arr.shape[1:] != tuple(np.shape(f)[0] for f in factors):
        raise ValueError(f"tensor shape {arr.shape[1:]} does not match the bases")
    total = 0.0
    for i in range(0, arr.shape[0], chunk):
        diff = arr[i:i + chunk] - kruskal_reconstruct(x[i:i + chunk], factors)
        total += float(np.vdot(diff, diff))
    return total


def cpd_loss(t, t_aug, x, x_aug, factors: Sequence[np.ndarray]) -> float:
    """Reconstruction error of the original and (if given) augmented tensors."""
    loss = _residual_sq(t, x, factors)
    if t_aug is not None:
        loss += _residual_sq(t_aug, x_aug, factors)
    return loss


def reg_loss(x, x_aug, factors: Sequence[np.ndarray], alpha: float) -> float:
    blocks = [x, x_aug, *factors]
    return alpha * sum(float(np.sum(np.square(b))) for b in blocks if b is not None)


def row_norms(y: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("nr,nr->n", y, y))


def unit_rows(y: np.ndarray) -> np.ndarray:
    """Rows of ``y`` scaled to unit length; short rows raise."""
    y = np.asarray(y, dtype=np.float64)
    norms = row_norms(y)
    bad = np.flatnonzero(norms < ROW_NORM_FLOOR)
    if bad.size:
        raise ZeroNormRowError(f"rows {bad.tolist()[:5]} have norm below {ROW_NORM_FLOOR}")
    return y / norms[:, None]


def apply_g_gamma(y: np.ndarray, gamma: float) -> np.ndarray:
    """``G(gamma) @ y`` in O(N R) without forming the N x N matrix."""
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if n < 2:
        raise ValueError("G(gamma) needs at least 2 rows")
    off = (gamma + 1.0) / (n * (n - 1))
    return off * (y.sum(axis=0) - y) - y / n


def ss_loss(x, x_aug, params: SsLossParams) -> float:
    """Empirical alignment loss ``beta * trace(X' D(X) G D(Xa) Xa)``."""
    u = unit_rows(x)
    v = unit_rows(x_aug)
    if u.shape != v.shape:
        raise ValueError(f"coefficient shapes differ: {u.shape} vs {v.shape}")
    return params.beta * float(np.vdot(u, apply_g_gamma(v, params.gamma)))


@dataclass(frozen=True)
class LossTerms:
    cpd: float
    reg: float
    ss: float

    @property
    def total(self) -> float:
        return self.cpd + self.reg + self.ss


def loss_terms(t, t_aug, x, x_aug, factors, alpha: float, params: SsLossParams | None) -> LossTerms:
    ss = 0.0
    if params is not None and params.beta > 0 and x_aug is not None:
        ss = ss_loss(x, x_aug, params)
    return LossTerms(
        cpd=cpd_loss(t, t_aug, x, x_aug, factors),
        reg=reg_loss(x, x_aug, factors, alpha),
        ss=ss,
    )


def total_loss(t, t_aug, x, x_aug, factors, alpha: float, params: SsLossParams | None) -> float:
    return loss_terms(t, t_aug, x, x_aug, factors, alpha, params).total


def bound_constants(rates: Sequence[float], lam: float) -> BoundConstants:
    """Two-sided bound constants relating the alignment loss to its surrogate.

    ``C1 = 1 + max_m lam c_m / (1 - c_m)`` and ``C2`` the same with ``min``.
    They coincide exactly when the class rates are balanced.
    """
    rates = tuple(float(c) for c in rates)
    if lam < 1:
        raise ValueError("lambda must be >= 1")
    if not rates or any(not 0.0 < c < 1.0 for c in rates):
        raise ValueError("class rates must lie strictly between 0 and 1")
    if abs(sum(rates) - 1.0) > 1e-9:
        raise ValueError(f"class rates sum to {sum(rates)}, expected 1")
    odds = [lam * c / (1.0 - c) for c in rates]
    return BoundConstants(rates, float(lam), 1.0 + max(odds), 1.0 + min(odds))


def concentration_bound(n: int, gamma: float, delta: float) -> float:
    """Deviation radius of the empirical alignment loss at confidence ``1 - delta``."""
    if n < 2:
        raise ValueError("need n >= 2")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return math.sqrt((1.0 + (gamma + 1.0) ** 2 / (n - 1)) * (2.0 / n) * math.log(2.0 / delta))
