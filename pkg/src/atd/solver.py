"""Stochastic alternating optimization of the augmented decomposition.

Each batch goes through five steps: a ridge cold start for the coefficients
of the batch and its augmented copy, the auxiliary fixed-point rule that
folds in the alignment term, and one blended ridge update per basis factor.
The bases are shared across batches and refined gradually.

Variants selected by ``SaoConfig.mode``:

``atd``
    the full objective;
``atd_ss_minus``
    the same pipeline with ``beta = 0``;
``sals``
    batched CP-ALS on the original samples only (no augmented copy);
``cp_als_full``
    plain regularized CP-ALS over the whole tensor (:func:`cp_als_full`).
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import GaussianPerturbation
from .kernels import GramStack, hadamard_gram, gram, mttkrp, ridge_solve
from .memory import NULL_TRACKER, AllocationTracker
from .objective import (ROW_NORM_FLOOR, SsLossParams, apply_g_gamma, cpd_loss, row_norms,
                        ss_loss)
from .tensor import TensorBatch, as_array, frobenius_norm_sq

log = logging.getLogger(__name__)

MODES = ("atd", "atd_ss_minus", "cp_als_full", "sals")


class ConfigError(ValueError):
    """Invalid solver configuration."""


class DivergenceError(ArithmeticError):
    """The optimization produced a non-finite or increasing loss."""


class ClampWarning(RuntimeWarning):
    """A coefficient row norm fell below the floor and was clamped."""


class RecursionDivergenceWarning(RuntimeWarning):
    """Successive auxiliary-rule steps grew instead of shrinking."""


class BoundViolationWarning(RuntimeWarning):
    """A basis factor left the Frobenius-norm ball it is proven to stay in."""


@dataclass
class SaoConfig:
    rank: int = 32
    alpha: float = 1e-3
    beta: float = 2.0
    gamma: float | None = None  # None: use the batch size
    eta: float = 2e-3
    batch_size: int = 128
    t_rounds: int = 1
    max_sweeps: int = 50
    stop_tol: float = 1e-3
    stop_window: int = 3
    seed: int = 0
    mode: str = "atd"
    moving_average: bool = False
    c_min: float = 0.5
    aug_scale: float = 0.05

    def validate(self) -> "SaoConfig":
        checks = [
            (self.rank >= 1, "rank must be >= 1"),
            (self.alpha > 0, "alpha must be > 0"),
            (self.beta >= 0, "beta must be >= 0"),
            (self.gamma is None or self.gamma >= 0, "gamma must be >= 0"),
            (0 < self.eta <= 1, "eta must lie in (0, 1]"),
            (self.batch_size >= 2, "batch size must be >= 2"),
            (self.t_rounds >= 1, "t_rounds must be >= 1"),
            (self.max_sweeps >= 1, "max_sweeps must be >= 1"),
            (self.stop_tol > 0, "stop_tol must be > 0"),
            (self.stop_window >= 1, "stop_window must be >= 1"),
            (self.mode in MODES, f"mode must be one of {MODES}"),
            (0 < self.c_min <= 1, "c_min must lie in (0, 1]"),
            (self.aug_scale >= 0, "aug_scale must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.mode in ("atd_ss_minus", "sals", "cp_als_full") else self.beta

    @property
    def uses_augmentation(self) -> bool:
        return self.mode in ("atd", "atd_ss_minus")

    def gamma_for(self, b: int) -> float:
        return float(b) if self.gamma is None else float(self.gamma)

    def replace(self, **changes) -> "SaoConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {"rank": int, "alpha": float, "beta": float, "eta": float, "batch_size": int,
                "t_rounds": int, "max_sweeps": int, "stop_tol": float, "stop_window": int,
                "seed": int, "mode": str, "c_min": float, "aug_scale": float}
REQUIRED_KEYS = ("rank", "alpha", "beta", "eta", "batch_size")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config(text: str) -> SaoConfig:
    """Parse ``key = value`` lines into a validated :class:`SaoConfig`.

    ``gamma = b`` (or a missing gamma) ties gamma to the batch size.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    entries = dict(parser["run"])
    missing = [k for k in REQUIRED_KEYS if k not in entries]
    if missing:
        raise ConfigError(f"config is missing {missing}")
    values = {}
    for key, raw in entries.items():
        try:
            if key == "gamma":
                values[key] = None if raw.strip().lower() in ("b", "batch", "none") else float(raw)
            elif key == "moving_average":
                values[key] = _parse_bool(raw)
            elif key in _FIELD_TYPES:
                values[key] = _FIELD_TYPES[key](raw.strip())
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return SaoConfig(**values).validate()


def load_config(path) -> SaoConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: SaoConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {'b' if value is None else value}")
    return "\n".join(lines) + "\n"


@dataclass
class KruskalBases:
    """Shared basis factors, one ``extent x R`` matrix per non-sample mode."""

    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        factors = tuple(np.array(f, dtype=np.float64) for f in self.factors)
        if len(factors) < 1:
            raise ValueError("need at least one basis factor")
        if len({f.shape[1] for f in factors}) != 1 or any(f.ndim != 2 for f in factors):
            raise ValueError("basis factors must be matrices of a shared rank")
        if not all(np.all(np.isfinite(f)) for f in factors):
            raise ValueError("basis factors contain non-finite values")
        self.factors = factors

    @classmethod
    def random(cls, shape: Sequence[int], rank: int, rng) -> "KruskalBases":
        rng = np.random.default_rng(rng)
        return cls(tuple(rng.standard_normal((n, rank)) / math.sqrt(rank) for n in shape))

    @property
    def A(self) -> np.ndarray:
        return self.factors[0]

    @property
    def B(self) -> np.ndarray:
        return self.factors[1]

    @property
    def C(self) -> np.ndarray:
        return self.factors[2]

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    def with_factor(self, k: int, value: np.ndarray) -> "KruskalBases":
        factors = list(self.factors)
        factors[k] = value
        return KruskalBases(tuple(factors))

    def copy(self) -> "KruskalBases":
        return KruskalBases(tuple(f.copy() for f in self.factors))

    def norms_sq(self) -> tuple[float, ...]:
        return tuple(float(np.sum(f * f)) for f in self.factors)


@dataclass(frozen=True)
class SweepReport:
    sweep: int
    loss_total: float
    loss_cpd: float
    loss_reg: float
    loss_ss: float
    seconds: float
    peak_aux_bytes: int
    stopped: bool = False
    bound_violations: int = 0


REPORT_COLUMNS = ("sweep", "loss_total", "loss_cpd", "loss_reg", "loss_ss", "seconds",
                  "peak_aux_bytes")


def write_reports(reports: Sequence[SweepReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([r.sweep, repr(r.loss_total), repr(r.loss_cpd), repr(r.loss_reg),
                             repr(r.loss_ss), f"{r.seconds:.6f}", r.peak_aux_bytes])


def read_reports(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def should_stop(history: Sequence[float], tol: float = 1e-3, window: int = 3) -> bool:
    """True when the last ``window`` sweep-to-sweep relative changes are all below ``tol``."""
    if len(history) < window + 1:
        return False
    tail = history[-(window + 1):]
    for prev, cur in zip(tail[:-1], tail[1:]):
        scale = abs(prev) if prev != 0 else 1.0
        if not abs(cur - prev) / scale < tol:
            return False
    return True


def _batch_array(batch) -> np.ndarray:
    return batch.tensor if isinstance(batch, TensorBatch) else as_array(batch)


def cold_start(batch, batch_aug, bases: KruskalBases, alpha: float,
               tracker: AllocationTracker = NULL_TRACKER):
    """Ridge solves for the coefficients of a batch and of its augmented copy.

    Returns ``(X_init, Xa_init)``; ``Xa_init`` is ``None`` without an
    augmented batch.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    stack = GramStack.from_factors(bases.factors, alpha)
    out = []
    for b in (batch, batch_aug):
        if b is None:
            out.append(None)
            continue
        arr = _batch_array(b)
        if arr.shape[1:] != bases.shape:
            raise ValueError(f"batch sample shape {arr.shape[1:]} does not match bases {bases.shape}")
        out.append(ridge_solve(mttkrp(arr, [None, *bases.factors], 0, tracker), stack))
    return out[0], out[1]


def _inv_row_norms(y: np.ndarray) -> np.ndarray:
    norms = row_norms(y)
    short = norms < ROW_NORM_FLOOR
    if short.any():
        warnings.warn(f"{int(short.sum())} coefficient rows clamped at norm {ROW_NORM_FLOOR}",
                      ClampWarning, stacklevel=3)
        norms = np.maximum(norms, ROW_NORM_FLOOR)
    return 1.0 / norms


def _recursion(v1: np.ndarray, v2: np.ndarray, beta: float, rounds: int) -> np.ndarray:
    x = v1
    prev_step = math.inf
    for _ in range(rounds):
        nxt = v1 - beta * _inv_row_norms(x)[:, None] * v2
        step = float(np.linalg.norm(nxt - x))
        # steps at round-off level jitter; only growth above it is a signal
        if step > prev_step and step > 1e-12 * float(np.linalg.norm(nxt)):
            warnings.warn(f"auxiliary rule step grew from {prev_step:.3e} to {step:.3e}",
                          RecursionDivergenceWarning, stacklevel=3)
        prev_step = step
        x = nxt
    return x


def _auxiliary(x_init, xa_init, stack: GramStack, beta: float, gamma: float, rounds: int):
    if beta == 0:
        return x_init, xa_init
    if x_init.shape != xa_init.shape:
        raise ValueError(f"coefficient shapes differ: {x_init.shape} vs {xa_init.shape}")
    # G is symmetric, so the same expression serves both directions
    v2 = ridge_solve(apply_g_gamma(_inv_row_norms(xa_init)[:, None] * xa_init, gamma), stack)
    v2a = ridge_solve(apply_g_gamma(_inv_row_norms(x_init)[:, None] * x_init, gamma), stack)
    return _recursion(x_init, v2, beta, rounds), _recursion(xa_init, v2a, beta, rounds)


def auxiliary_step(x_init, xa_init, bases: KruskalBases, cfg: SaoConfig):
    """Refine cold-start coefficients with the alignment term.

    Runs ``X <- V1 - beta * D(X) @ V2`` for ``cfg.t_rounds`` rounds, where
    ``V1`` is the cold start itself and ``V2`` solves the ridge system with
    right-hand side ``G(gamma) D(Xa_init) Xa_init``.  ``Xa`` is refined the
    same way with the roles swapped; the two recursions are independent.

    Each round is the exact minimizer, over ``X`` with ``D`` frozen, of the
    fit and ridge terms plus twice the alignment trace.
    """
    x_init = np.asarray(x_init, dtype=np.float64)
    xa_init = np.asarray(xa_init, dtype=np.float64)
    stack = GramStack.from_factors(bases.factors, cfg.alpha)
    gamma = cfg.gamma_for(x_init.shape[0])
    return _auxiliary(x_init, xa_init, stack, cfg.effective_beta, gamma, cfg.t_rounds)


def _main_system(k, x, xa, batch, batch_aug, bases, tracker):
    others = [f for j, f in enumerate(bases.factors) if j != k]
    rhs = mttkrp(batch, [x, *bases.factors], k + 1, tracker)
    had = hadamard_gram([x, *others])
    if batch_aug is not None:
        rhs += mttkrp(batch_aug, [xa, *bases.factors], k + 1, tracker)
        had += hadamard_gram([xa, *others])
    return rhs, had


def main_step(k: int, x, xa, batch, batch_aug, bases: KruskalBases, alpha: float, eta: float,
              tracker: AllocationTracker = NULL_TRACKER) -> np.ndarray:
    """Blended ridge update of basis factor ``k`` (0 for A, 1 for B, 2 for C).

    The ridge problem stacks the original and augmented systems; pass
    ``batch_aug=None`` for the original system alone.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    rhs, had = _main_system(k, x, xa, _batch_array(batch),
                            None if batch_aug is None else _batch_array(batch_aug), bases, tracker)
    star = ridge_solve(rhs, GramStack(had, alpha))
    return (1.0 - eta) * bases.factors[k] + eta * star


def _fit_from_system(norm_sq: float, rhs: np.ndarray, had: np.ndarray, f: np.ndarray) -> float:
    # ||T - [[F; others]]||^2 expanded around the normal equations of F
    return norm_sq - 2.0 * float(np.vdot(rhs, f)) + float(np.vdot(gram(f), had))


def factor_bound(t_sq: float, ta_sq: float, alpha: float, beta: float, gamma: float) -> float:
    """Frobenius-squared ceiling on every basis factor."""
    return (t_sq + ta_sq + 2.0 * beta * (gamma + 2.0)) / alpha


def _batch_indices(n: int, b: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    chunks = [order[i:i + b] for i in range(0, n, b)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


@dataclass
class _SweepTotals:
    cpd: float = 0.0
    reg: float = 0.0
    ss: float = 0.0
    violations: int = 0


@dataclass
class _MovingAverage:
    prev: np.ndarray | None = None
    prev_aug: np.ndarray | None = None
    step: int = 0


def _check_finite(value: float, what: str, sweep: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite {what} in sweep {sweep}")


def _resolve_init(shape, cfg: SaoConfig, init, rng) -> KruskalBases:
    if init is None:
        return KruskalBases.random(shape, cfg.rank, rng)
    bases = init.copy()
    if bases.shape != tuple(shape) or bases.rank != cfg.rank:
        raise ConfigError(f"initial bases {bases.shape} rank {bases.rank} do not match "
                          f"tensor {tuple(shape)} rank {cfg.rank}")
    return bases


def sao_run(t, augmenter=None, cfg: SaoConfig | None = None, init: KruskalBases | None = None,
            callback: Callable | None = None, tracker: AllocationTracker | None = None):
    """Run the stochastic alternating optimization.

    Parameters
    ----------
    t : array_like or DenseTensor
        Samples along the first mode.
    augmenter : callable, optional
        ``augmenter(batch, rng) -> ndarray`` producing the augmented copy of
        a batch.  Defaults to :class:`GaussianPerturbation` with
        ``cfg.aug_scale``.  Ignored in ``sals`` mode.
    cfg : SaoConfig
    init : KruskalBases, optional
        Starting bases; drawn from ``cfg.seed`` otherwise.
    callback : callable, optional
        Called as ``callback(report, bases)`` after every sweep.
    tracker : AllocationTracker, optional
        Receives the per-batch working set; ``peak_aux_bytes`` in the
        reports is its per-sweep peak.

    Returns
    -------
    bases : KruskalBases
    reports : list of SweepReport
    """
    cfg = (cfg or SaoConfig()).validate()
    if cfg.mode == "cp_als_full":
        raise ConfigError("use cp_als_full for the full-tensor mode")
    arr = as_array(t)
    n = arr.shape[0]
    if n < cfg.batch_size:
        raise ConfigError(f"batch size {cfg.batch_size} exceeds the {n} samples")
    tracker = tracker or AllocationTracker()
    init_ss, shuffle_ss, aug_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    bases = _resolve_init(arr.shape[1:], cfg, init, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    aug_rng = np.random.default_rng(aug_ss)
    if cfg.uses_augmentation and augmenter is None:
        augmenter = GaussianPerturbation(cfg.aug_scale)
    beta = cfg.effective_beta
    ma = _MovingAverage()

    reports: list[SweepReport] = []
    history: list[float] = []
    for sweep in range(1, cfg.max_sweeps + 1):
        start = time.perf_counter()
        tracker.reset_peak()
        totals = _SweepTotals()
        for idx in _batch_indices(n, cfg.batch_size, shuffle_rng):
            bases = _sao_batch(arr, idx, bases, cfg, beta, augmenter, aug_rng, ma, totals,
                               tracker, sweep)
        loss = (totals.cpd + totals.reg + totals.ss) / n
        _check_finite(loss, "loss", sweep)
        history.append(loss)
        stop = should_stop(history, cfg.stop_tol, cfg.stop_window)
        report = SweepReport(sweep, loss, totals.cpd / n, totals.reg / n, totals.ss / n,
                             time.perf_counter() - start, tracker.peak, stop, totals.violations)
        reports.append(report)
        log.info("sweep %d loss %.6e (%.2fs)", sweep, loss, report.seconds)
        if callback is not None:
            callback(report, bases)
        if stop:
            break
    if ma.prev is not None:
        tracker.release(ma.prev, ma.prev_aug)
    return bases, reports


def _sao_batch(arr, idx, bases, cfg, beta, augmenter, aug_rng, ma, totals, tracker, sweep):
    batch = arr[idx]
    tracker.acquire(batch)
    batch_aug = None
    if cfg.uses_augmentation:
        batch_aug = np.asarray(augmenter(TensorBatch(idx, batch), aug_rng), dtype=np.float64)
        if np.shares_memory(batch_aug, batch):
            batch_aug = batch_aug.copy()
        if batch_aug.shape != batch.shape:
            raise ValueError(f"augmenter returned {batch_aug.shape}, expected {batch.shape}")
        tracker.acquire(batch_aug)

    eta = cfg.eta
    if cfg.moving_average:
        ma.step += 1
        eta = min(1.0, cfg.c_min / ma.step)
        if ma.prev is not None and ma.prev.shape == batch.shape:
            batch *= eta
            batch += (1.0 - eta) * ma.prev
            if batch_aug is not None:
                batch_aug *= eta
                batch_aug += (1.0 - eta) * ma.prev_aug
        tracker.release(ma.prev, ma.prev_aug)
        ma.prev, ma.prev_aug = batch, batch_aug
        # the retained batch stays live until the next one replaces it
        tracker.acquire(ma.prev, ma.prev_aug)

    b = batch.shape[0]
    gamma = cfg.gamma_for(b)
    stack = GramStack.from_factors(bases.factors, cfg.alpha)
    x = ridge_solve(mttkrp(batch, [None, *bases.factors], 0, tracker), stack)
    xa = None
    if batch_aug is not None:
        xa = ridge_solve(mttkrp(batch_aug, [None, *bases.factors], 0, tracker), stack)
    tracker.acquire(x, xa)
    if beta > 0:
        x_new, xa_new = _auxiliary(x, xa, stack, beta, gamma, cfg.t_rounds)
        tracker.release(x, xa)
        x, xa = x_new, xa_new
        tracker.acquire(x, xa)

    t_sq = frobenius_norm_sq(batch)
    ta_sq = 0.0 if batch_aug is None else frobenius_norm_sq(batch_aug)
    ceiling = factor_bound(t_sq, ta_sq, cfg.alpha, beta, gamma)
    for k in range(len(bases.factors)):
        rhs, had = _main_system(k, x, xa, batch, batch_aug, bases, tracker)
        star = ridge_solve(rhs, GramStack(had, cfg.alpha))
        if not np.all(np.isfinite(star)):
            raise DivergenceError(f"non-finite basis factor {k} in sweep {sweep}")
        bases = bases.with_factor(k, (1.0 - eta) * bases.factors[k] + eta * star)
        if float(np.sum(bases.factors[k] ** 2)) > ceiling:
            totals.violations += 1
            warnings.warn(f"basis factor {k} exceeds its norm bound in sweep {sweep}",
                          BoundViolationWarning, stacklevel=3)

    # losses at the refreshed bases, from the last factor's normal equations
    fit = _fit_from_system(t_sq + ta_sq, rhs, had, bases.factors[-1])
    _check_finite(fit, "fit", sweep)
    totals.cpd += max(fit, 0.0)
    totals.reg += cfg.alpha * sum(float(np.sum(y * y)) for y in (x, xa) if y is not None)
    totals.reg += cfg.alpha * sum(bases.norms_sq()) * b / arr.shape[0]
    if beta > 0:
        totals.ss += ss_loss(x, xa, SsLossParams(gamma, beta))

    tracker.release(x, xa)
    if batch_aug is not None:
        tracker.release(batch_aug)
    tracker.release(batch)
    return bases


def cp_als_full(t, cfg: SaoConfig | None = None, init: KruskalBases | None = None,
                callback: Callable | None = None,
                tracker: AllocationTracker | None = None) -> KruskalBases:
    """Regularized CP-ALS over the whole tensor.

    Alternates exact ridge solves for the coefficients and each basis factor.
    The fit-plus-ridge objective is checked to be non-increasing after every
    half-step; an increase beyond rounding raises :class:`DivergenceError`.
    """
    cfg = (cfg or SaoConfig(mode="cp_als_full")).validate()
    arr = as_array(t)
    tracker = tracker or AllocationTracker()
    init_ss = np.random.SeedSequence(cfg.seed).spawn(3)[0]
    bases = _resolve_init(arr.shape[1:], cfg, init, np.random.default_rng(init_ss))
    t_sq = frobenius_norm_sq(arr)
    slack = 1e-10 * max(t_sq, 1.0)
    history: list[float] = []
    x = None
    tracker.acquire(arr)
    for sweep in range(1, cfg.max_sweeps + 1):
        start = time.perf_counter()
        tracker.reset_peak()
        prev = math.inf

        def step_loss(value, label):
            nonlocal prev
            _check_finite(value, "loss", sweep)
            if value > prev + slack:
                raise DivergenceError(f"loss rose from {prev:.12e} to {value:.12e} "
                                      f"after the {label} update in sweep {sweep}")
            prev = value

        rhs = mttkrp(arr, [None, *bases.factors], 0, tracker)
        had = hadamard_gram(bases.factors)
        x = ridge_solve(rhs, GramStack(had, cfg.alpha))
        reg_bases = cfg.alpha * sum(bases.norms_sq())
        step_loss(_fit_from_system(t_sq, rhs, had, x) + cfg.alpha * float(np.sum(x * x))
                  + reg_bases, "X")
        for k in range(len(bases.factors)):
            rhs, had = _main_system(k, x, None, arr, None, bases, tracker)
            bases = bases.with_factor(k, ridge_solve(rhs, GramStack(had, cfg.alpha)))
            fit = _fit_from_system(t_sq, rhs, had, bases.factors[k])
            step_loss(fit + cfg.alpha * (float(np.sum(x * x)) + sum(bases.norms_sq())),
                      "ABCDEFGH"[k])
        loss = prev / arr.shape[0]
        history.append(loss)
        stop = should_stop(history, cfg.stop_tol, cfg.stop_window)
        fit_now = fit / arr.shape[0]
        report = SweepReport(sweep, loss, fit_now, loss - fit_now, 0.0,
                             time.perf_counter() - start, tracker.peak, stop)
        if callback is not None:
            callback(report, bases)
        if stop:
            break
    tracker.release(arr)
    return bases


def decompose(t, cfg: SaoConfig, augmenter=None, init: KruskalBases | None = None,
              callback: Callable | None = None, tracker: AllocationTracker | None = None):
    """Dispatch on ``cfg.mode``; always returns ``(bases, reports)``."""
    cfg.validate()
    if cfg.mode != "cp_als_full":
        return sao_run(t, augmenter, cfg, init, callback, tracker)
    reports: list[SweepReport] = []

    def collect(report, bases):
        reports.append(report)
        if callback is not None:
            callback(report, bases)

    return cp_als_full(t, cfg, init, collect, tracker), reports


def extract_features(t, bases: KruskalBases, alpha: float,
                     tracker: AllocationTracker = NULL_TRACKER) -> np.ndarray:
    """Ridge coefficients of every sample of ``t`` against fixed ``bases``."""
    x, _ = cold_start(t, None, bases, alpha, tracker)
    return x


def relative_error(t, bases: KruskalBases, alpha: float) -> float:
    """``||T - [[f(T); bases]]|| / ||T||`` with ridge features ``f``."""
    arr = as_array(t)
    x = extract_features(arr, bases, alpha)
    return math.sqrt(cpd_loss(arr, None, x, None, bases.factors) / frobenius_norm_sq(arr))
