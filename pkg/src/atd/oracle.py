"""Brute-force reference implementations for tests.

Everything here favours transparency over speed: matrices are materialized,
linear systems are solved by textbook elimination.  Inputs are capped in
size so that a test using these stays fast.  Nothing in the package's
computational path imports this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.optimize

MAX_ROWS = 64
MAX_EXTENT = 16


def _cap(value: int, limit: int, what: str) -> None:
    if value > limit:
        raise ValueError(f"{what} {value} exceeds the oracle cap {limit}")


def dense_g_matrix(n: int, gamma: float) -> np.ndarray:
    """The ``n x n`` contrast matrix: ``-1/n`` diagonal, ``(gamma+1)/(n(n-1))`` elsewhere."""
    if n < 2:
        raise ValueError("need n >= 2")
    _cap(n, MAX_ROWS, "row count")
    g = np.full((n, n), (gamma + 1.0) / (n * (n - 1)))
    np.fill_diagonal(g, -1.0 / n)
    return g


@dataclass(frozen=True)
class FdSpec:
    h: float = 1e-5
    scheme: str = "central"

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step must be > 0")
        if self.scheme != "central":
            raise ValueError("only central differences are supported")


def fd_gradient(objective: Callable[[np.ndarray], float], point, spec: FdSpec = FdSpec()) -> np.ndarray:
    """Entrywise central-difference gradient of a scalar function of an array."""
    point = np.array(point, dtype=np.float64)
    grad = np.empty_like(point)
    for i in np.ndindex(point.shape):
        orig = point[i]
        point[i] = orig + spec.h
        up = objective(point.copy())
        point[i] = orig - spec.h
        down = objective(point.copy())
        point[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise ValueError(f"objective is not finite near entry {i}")
        grad[i] = (up - down) / (2 * spec.h)
    return grad


def naive_ls(rhs, gram_dense) -> np.ndarray:
    """Solve ``X @ gram_dense = rhs`` by Gaussian elimination with partial pivoting."""
    a = np.array(gram_dense, dtype=np.float64).T
    b = np.array(rhs, dtype=np.float64, ndmin=2).T
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise ValueError("incompatible system shapes")
    _cap(n, MAX_ROWS, "system size")
    scale = np.abs(a).max()
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[pivot, col]) <= 1e-14 * scale:
            raise np.linalg.LinAlgError("singular system")
        if pivot != col:
            a[[col, pivot]] = a[[pivot, col]]
            b[[col, pivot]] = b[[pivot, col]]
        for row in range(col + 1, n):
            m = a[row, col] / a[col, col]
            a[row, col:] -= m * a[col, col:]
            b[row] -= m * b[col]
    x = np.zeros_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1:] @ x[row + 1:]) / a[row, row]
    return x.T


def naive_khatri_rao(factors: Sequence[np.ndarray]) -> np.ndarray:
    cols = []
    for r in range(np.shape(factors[0])[1]):
        col = np.ones(1)
        for f in factors:
            col = np.kron(col, np.asarray(f, dtype=np.float64)[:, r])
        cols.append(col)
    return np.stack(cols, axis=1)


def naive_mttkrp(t, factors: Sequence[np.ndarray | None], mode: int) -> np.ndarray:
    """``unfold(t, mode) @ khatri_rao(other factors)`` with everything materialized.

    ``factors`` has one entry per mode; the ``mode`` entry is ignored.
    """
    t = np.asarray(t, dtype=np.float64)
    for n in t.shape:
        _cap(n, max(MAX_EXTENT, MAX_ROWS), "extent")
    perm = [mode] + [k for k in range(t.ndim) if k != mode]
    unfolded = np.transpose(t, perm).reshape(t.shape[mode], -1)
    return unfolded @ naive_khatri_rao([factors[k] for k in perm[1:]])


def naive_reconstruct(x, factors: Sequence[np.ndarray]) -> np.ndarray:
    """Sample-major Kruskal tensor, one sample per row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    kr = naive_khatri_rao(factors)
    shape = tuple(np.shape(f)[0] for f in factors)
    return np.stack([(kr * row).sum(axis=1).reshape(shape) for row in x])


def naive_cpd_loss(t, x, factors) -> float:
    diff = np.asarray(t, dtype=np.float64).reshape(np.shape(x)[0], -1) \
        - naive_reconstruct(x, factors).reshape(np.shape(x)[0], -1)
    return float(sum(v * v for v in diff.ravel()))


def naive_ss_loss(x, x_aug, gamma: float, beta: float) -> float:
    """``beta * trace(X' D(X) G D(Xa) Xa)`` with dense ``D`` and ``G``."""
    x = np.asarray(x, dtype=np.float64)
    x_aug = np.asarray(x_aug, dtype=np.float64)
    d = np.diag(1.0 / np.linalg.norm(x, axis=1))
    da = np.diag(1.0 / np.linalg.norm(x_aug, axis=1))
    return beta * float(np.trace(x.T @ d @ dense_g_matrix(x.shape[0], gamma) @ da @ x_aug))


def contraction_factor(v1, v2, beta: float) -> float:
    """``beta ||v2|| / (||v1||^2 - <v1, v2/||v2||>^2)``."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    along = float(v1 @ v2) / float(np.linalg.norm(v2))
    denom = float(v1 @ v1) - along * along
    return math.inf if denom <= 0 else beta * float(np.linalg.norm(v2)) / denom


def fixed_point_u(v1, v2, beta: float) -> np.ndarray:
    """Solve ``u = v1 - (beta / ||u||) v2`` through a scalar equation in ``s = ||u||``.

    The largest positive root of ``s - ||v1 - (beta/s) v2|| = 0`` is
    bracketed by a downward grid scan and refined with Brent's method.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if beta == 0:
        return v1.copy()

    def gap(s):
        return s - float(np.linalg.norm(v1 - (beta / s) * v2))

    n1, n2 = float(np.linalg.norm(v1)), float(np.linalg.norm(v2))
    hi = n1 + math.sqrt(beta * n2) + 1.0
    grid = np.geomspace(hi, 1e-9 * hi, 4000)
    values = grid - np.linalg.norm(v1[None] - (beta / grid)[:, None] * v2[None], axis=1)
    for k in range(1, len(grid)):
        if values[k] <= 0 < values[k - 1] or values[k] == 0:
            s = scipy.optimize.brentq(gap, grid[k], grid[k - 1], xtol=1e-300, rtol=1e-15,
                                      maxiter=500)
            return v1 - (beta / s) * v2
    raise ValueError("no positive fixed-point norm")


def recursion_iterates(v1, v2, beta: float, u0, steps: int) -> np.ndarray:
    """Iterates ``u^0 .. u^steps`` of ``u <- v1 - (beta/||u||) v2``."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    out = [np.asarray(u0, dtype=np.float64)]
    for _ in range(steps):
        out.append(v1 - beta / float(np.linalg.norm(out[-1])) * v2)
    return np.stack(out)
