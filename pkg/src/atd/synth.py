"""Class-structured synthetic tensors, feature extraction and linear evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.special

from .kernels import khatri_rao
from .solver import KruskalBases, SaoConfig, decompose, extract_features
from .tensor import DenseTensor

__all__ = [
    "SyntheticSpec", "SyntheticData", "generate", "extract_features",
    "LabeledFeatures", "LinearConfig", "LinearModel", "train_linear", "accuracy",
    "split_train_test", "downstream_accuracy",
]


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 200
    shape: tuple[int, ...] = (8, 9, 10)
    rank: int = 5
    classes: int = 2
    centroids: np.ndarray | None = None
    tau: float = 0.2
    sigma: float = 0.01
    seed: int = 0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.amplitude <= 0:
            raise ValueError("amplitude must be > 0")
        if self.n < 1 or self.rank < 1 or self.classes < 1:
            raise ValueError("n, rank and classes must be >= 1")
        if any(k < 1 for k in self.shape):
            raise ValueError("all extents must be >= 1")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.centroids is not None:
            mu = np.asarray(self.centroids, dtype=np.float64)
            if mu.shape != (self.classes, self.rank):
                raise ValueError(f"centroids must be {self.classes} x {self.rank}")
            for a in range(self.classes):
                for b in range(a):
                    if np.array_equal(mu[a], mu[b]):
                        raise ValueError(f"centroids {b} and {a} coincide")


@dataclass(frozen=True)
class SyntheticData:
    tensor: DenseTensor
    labels: np.ndarray
    bases: KruskalBases
    coefficients: np.ndarray
    noise: np.ndarray


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Draw ``T[n] = [[x_n; A, B, C]] + sigma * noise`` with class-centred ``x_n``.

    Bases are Gaussian with unit-norm columns.  ``x_n`` is the centroid of
    its class plus ``tau`` Gaussian spread, all scaled by ``amplitude``;
    labels cycle through 1..M.  The noise is not scaled, so ``amplitude``
    sets the signal-to-noise ratio.
    """
    rng = np.random.default_rng(spec.seed)
    factors = []
    for extent in spec.shape:
        f = rng.standard_normal((extent, spec.rank))
        factors.append(f / np.linalg.norm(f, axis=0))
    bases = KruskalBases(tuple(factors))
    centroids = (rng.standard_normal((spec.classes, spec.rank)) if spec.centroids is None
                 else np.asarray(spec.centroids, dtype=np.float64))
    labels = np.arange(spec.n) % spec.classes + 1
    x = spec.amplitude * (centroids[labels - 1]
                          + spec.tau * rng.standard_normal((spec.n, spec.rank)))
    clean = (x @ khatri_rao(factors).T).reshape((spec.n,) + tuple(spec.shape))
    noise = spec.sigma * rng.standard_normal(clean.shape)
    return SyntheticData(DenseTensor(clean + noise), labels, bases, x, noise)


@dataclass(frozen=True)
class LabeledFeatures:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.labels).astype(np.int64)
        if f.shape[0] != y.shape[0]:
            raise ValueError(f"{f.shape[0]} feature rows for {y.shape[0]} labels")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain non-finite values")
        if y.size and y.min() < 1:
            raise ValueError("labels are class ids starting at 1")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledFeatures":
        return LabeledFeatures(self.features[idx], self.labels[idx])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label"] + [f"f{r + 1}" for r in range(self.features.shape[1])])
            for label, row in zip(self.labels, self.features):
                writer.writerow([int(label)] + [repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path) -> "LabeledFeatures":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or not rows[0] or rows[0][0] != "label":
            raise ValueError(f"{path}: expected a header starting with 'label'")
        body = rows[1:]
        if not body:
            return cls(np.zeros((0, len(rows[0]) - 1)), np.zeros(0, dtype=np.int64))
        try:
            labels = [int(r[0]) for r in body]
            feats = [[float(v) for v in r[1:]] for r in body]
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from exc
        if len({len(r) for r in feats}) != 1 or len(feats[0]) != len(rows[0]) - 1:
            raise ValueError(f"{path}: ragged rows")
        return cls(np.array(feats), np.array(labels))


@dataclass(frozen=True)
class LinearConfig:
    l2: float = 1e-3
    max_iter: int = 5000
    tol: float = 1e-7


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray   # features x classes
    bias: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    classes: np.ndarray = field(repr=False)

    def decision(self, features) -> np.ndarray:
        z = (np.atleast_2d(features) - self.mean) / self.std
        return z @ self.weights + self.bias

    def predict(self, features) -> np.ndarray:
        return self.classes[np.argmax(self.decision(features), axis=1)]


def train_linear(train: LabeledFeatures, cfg: LinearConfig = LinearConfig()) -> LinearModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with the training statistics; the step is the
    inverse of a Lipschitz bound on the gradient, so the iteration is
    monotone and fully deterministic.
    """
    classes = np.unique(train.labels)
    if classes.size < 2:
        raise ValueError("training set holds a single class")
    f = train.features
    mean = f.mean(axis=0)
    std = f.std(axis=0)
    std[std == 0] = 1.0
    z = np.hstack([(f - mean) / std, np.ones((len(f), 1))])
    onehot = (train.labels[:, None] == classes[None, :]).astype(np.float64)
    n = len(f)
    step = 1.0 / (0.5 * np.linalg.norm(z, 2) ** 2 / n + cfg.l2)
    w = np.zeros((z.shape[1], classes.size))
    penalty = np.ones((z.shape[1], 1))
    penalty[-1] = 0.0  # bias is not shrunk
    for _ in range(cfg.max_iter):
        prob = scipy.special.softmax(z @ w, axis=1)
        grad = z.T @ (prob - onehot) / n + cfg.l2 * penalty * w
        w -= step * grad
        if np.linalg.norm(grad) < cfg.tol:
            break
    return LinearModel(w[:-1], w[-1], mean, std, classes)


def accuracy(model: LinearModel, test: LabeledFeatures) -> float:
    if len(test) == 0:
        raise ValueError("empty test set")
    return float(np.mean(model.predict(test.features) == test.labels))


def split_train_test(n: int, train_fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(order[:cut]), np.sort(order[cut:])


def downstream_accuracy(spec: SyntheticSpec, cfg: SaoConfig, augmenter=None,
                        train_fraction: float = 0.5) -> float:
    """Generate, decompose, extract features and score a held-out split."""
    data = generate(spec)
    bases, _ = decompose(data.tensor, cfg, augmenter)
    feats = LabeledFeatures(extract_features(data.tensor, bases, cfg.alpha), data.labels)
    train_idx, test_idx = split_train_test(spec.n, train_fraction, spec.seed)
    model = train_linear(feats.subset(train_idx))
    return accuracy(model, feats.subset(test_idx))


def load_features(path) -> LabeledFeatures:
    return LabeledFeatures.read_csv(Path(path))
