"""Signal-epoch augmentations and STFT tensorization.

Augmentations act on raw multichannel epochs (channels x samples) and keep
the epoch shape.  :func:`stft_tensorize` then turns an epoch into a
``(2 * channels, nfft // 2 + 1, frames)`` tensor of interleaved amplitude and
phase channels.

Two augmenter objects plug into the solver, both called as
``augmenter(batch, rng) -> ndarray`` with the batch's shape:

* :class:`GaussianPerturbation` perturbs tensor samples directly;
* :class:`EpochAugmenter` augments the raw epochs behind a batch and
  re-tensorizes them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.signal
from scipy.spatial.transform import Rotation

from .tensor import DenseTensor, TensorBatch, read_tensor, write_tensor

METHODS = ("jitter", "bandpass", "time_rotation", "rotation3d")
JITTER_KINDS = ("high", "low", "both")
FILTER_KINDS = ("lowpass", "highpass", "band")


@dataclass(frozen=True)
class SignalEpoch:
    data: np.ndarray
    sample_rate: float

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, ndmin=2)
        if data.ndim != 2:
            raise ValueError("epoch data must be channels x samples")
        if data.shape[1] < 2:
            raise ValueError("an epoch needs at least 2 samples")
        if not np.all(np.isfinite(data)):
            raise ValueError("epoch contains non-finite values")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    def replace(self, data) -> "SignalEpoch":
        return SignalEpoch(data, self.sample_rate)


@dataclass(frozen=True)
class StftSpec:
    nfft: int
    hop: int

    def __post_init__(self):
        if self.nfft < 2 or self.nfft & (self.nfft - 1):
            raise ValueError("nfft must be a power of two >= 2")
        if not 0 < self.hop <= self.nfft:
            raise ValueError("hop must lie in [1, nfft]")

    def frames(self, samples: int) -> int:
        return (samples - self.nfft) // self.hop + 1

    @property
    def bins(self) -> int:
        return self.nfft // 2 + 1


@dataclass(frozen=True)
class AugmentationPlan:
    """Which augmentations to draw from, and their parameters.

    ``highpass`` and ``lowpass`` are band-edge pairs in Hz.  A high-pass draw
    uses the lower edge of ``highpass`` as cutoff, a low-pass draw the upper
    edge of ``lowpass``, and a band draw cascades the two.
    """

    methods: tuple[str, ...] = ("jitter", "bandpass", "time_rotation")
    jitter_degree: float = 0.05
    highpass: tuple[float, float] = (1.0, 30.0)
    lowpass: tuple[float, float] = (10.0, 49.0)
    seed: int | None = None

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one augmentation method is required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown augmentation methods {sorted(unknown)}")
        if self.jitter_degree < 0:
            raise ValueError("jitter degree must be >= 0")
        for lo, hi in (self.highpass, self.lowpass):
            if not 0 < lo < hi:
                raise ValueError(f"invalid band edges ({lo}, {hi})")

    def check_rate(self, sample_rate: float) -> None:
        nyquist = sample_rate / 2
        for lo, hi in (self.highpass, self.lowpass):
            if hi >= nyquist:
                raise ValueError(f"band edge {hi} Hz is not below Nyquist ({nyquist} Hz)")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def jitter(e: SignalEpoch, d: float, kind: str = "high", seed=None) -> SignalEpoch:
    """Add uniform noise of amplitude ``d``.

    ``high`` draws one U[-1, 1] value per sample and channel; ``low`` draws
    ``ceil(samples / 100)`` values per channel (at least two) and linearly
    interpolates them across the epoch; ``both`` adds the two.
    """
    if d < 0:
        raise ValueError("jitter degree must be >= 0")
    if kind not in JITTER_KINDS:
        raise ValueError(f"unknown jitter kind {kind!r}")
    rng = _rng(seed)
    channels, samples = e.data.shape
    noise = np.zeros_like(e.data)
    if kind in ("high", "both"):
        noise += rng.uniform(-1.0, 1.0, size=e.data.shape)
    if kind in ("low", "both"):
        knots = max(2, math.ceil(samples / 100))
        coarse = rng.uniform(-1.0, 1.0, size=(channels, knots))
        grid = np.linspace(0.0, samples - 1, knots)
        t = np.arange(samples)
        noise += np.stack([np.interp(t, grid, row) for row in coarse])
    return e.replace(e.data + d * noise)


def butter1(cutoff: float, sample_rate: float, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """First-order Butterworth section via the prewarped bilinear transform."""
    if not 0 < cutoff < sample_rate / 2:
        raise ValueError(f"cutoff {cutoff} Hz must lie in (0, {sample_rate / 2})")
    k = math.tan(math.pi * cutoff / sample_rate)
    a = np.array([1.0, (k - 1.0) / (k + 1.0)])
    if kind == "lowpass":
        b = np.array([k, k]) / (k + 1.0)
    elif kind == "highpass":
        b = np.array([1.0, -1.0]) / (k + 1.0)
    else:
        raise ValueError(f"unknown section kind {kind!r}")
    return b, a


def bandpass(e: SignalEpoch, low: float, high: float, kind: str = "band") -> SignalEpoch:
    """Filter every channel with first-order sections from zero initial state.

    ``lowpass`` uses ``high`` as cutoff, ``highpass`` uses ``low``; ``band``
    runs the high-pass then the low-pass section.
    """
    if not 0 < low < high < e.sample_rate / 2:
        raise ValueError(f"need 0 < low < high < {e.sample_rate / 2}, got ({low}, {high})")
    if kind not in FILTER_KINDS:
        raise ValueError(f"unknown filter kind {kind!r}")
    y = e.data
    if kind in ("highpass", "band"):
        y = scipy.signal.lfilter(*butter1(low, e.sample_rate, "highpass"), y, axis=1)
    if kind in ("lowpass", "band"):
        y = scipy.signal.lfilter(*butter1(high, e.sample_rate, "lowpass"), y, axis=1)
    return e.replace(y)


def time_rotation(e: SignalEpoch, split: int | None = None, seed=None) -> SignalEpoch:
    """Swap the two pieces of the epoch cut at ``split`` (same cut on all channels)."""
    if split is None:
        split = int(_rng(seed).integers(1, e.samples))
    if not 0 <= split <= e.samples:
        raise ValueError(f"split {split} out of range [0, {e.samples}]")
    return e.replace(np.roll(e.data, -(split % e.samples), axis=1))


def _check_rotation(rot: np.ndarray) -> None:
    if rot.shape != (3, 3):
        raise ValueError("rotation must be 3 x 3")
    if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-10:
        raise ValueError("rotation matrix is not orthogonal")
    if abs(np.linalg.det(rot) - 1.0) > 1e-10:
        raise ValueError("rotation matrix must have determinant +1")


def rotation3d(e: SignalEpoch, rot: np.ndarray | None = None, seed=None) -> SignalEpoch:
    """Rotate each consecutive (x, y, z) channel triple by ``rot``."""
    if e.channels % 3:
        raise ValueError(f"{e.channels} channels is not a multiple of 3")
    if rot is None:
        rot = Rotation.random(random_state=_rng(seed)).as_matrix()
    rot = np.asarray(rot, dtype=np.float64)
    _check_rotation(rot)
    triples = e.data.reshape(-1, 3, e.samples)
    return e.replace(np.einsum("ij,gjt->git", rot, triples).reshape(e.data.shape))


def stft_tensorize(e: SignalEpoch, spec: StftSpec) -> DenseTensor:
    """Rectangular-window STFT without padding or centering.

    Output channel ``2c`` is the one-sided amplitude of source channel ``c``
    and ``2c + 1`` its phase in (-pi, pi].
    """
    if e.samples < spec.nfft:
        raise ValueError(f"{e.samples} samples is shorter than nfft={spec.nfft}")
    frames = np.lib.stride_tricks.sliding_window_view(e.data, spec.nfft, axis=1)[:, ::spec.hop]
    spectrum = np.fft.rfft(frames, axis=-1).transpose(0, 2, 1)
    phase = np.angle(spectrum)
    phase[phase <= -np.pi] = np.pi
    out = np.empty((2 * e.channels,) + spectrum.shape[1:])
    out[0::2] = np.abs(spectrum)
    out[1::2] = phase
    return DenseTensor(out)


def tensorize_epochs(epochs: Sequence[SignalEpoch], spec: StftSpec) -> np.ndarray:
    return np.stack([stft_tensorize(e, spec).data for e in epochs])


def choose_method(plan: AugmentationPlan, rng: np.random.Generator) -> str:
    return plan.methods[int(rng.integers(len(plan.methods)))]


def augment(e: SignalEpoch, plan: AugmentationPlan, seed=None) -> SignalEpoch:
    """Apply one augmentation drawn uniformly from ``plan.methods``.

    ``seed`` defaults to ``plan.seed``; a ``Generator`` is used as is.
    """
    rng = _rng(plan.seed if seed is None else seed)
    method = choose_method(plan, rng)
    if method == "jitter":
        kind = JITTER_KINDS[int(rng.integers(3))]
        return jitter(e, plan.jitter_degree, kind, rng)
    if method == "bandpass":
        plan.check_rate(e.sample_rate)
        kind = FILTER_KINDS[int(rng.integers(3))]
        if kind == "highpass":
            return bandpass(e, *plan.highpass, kind="highpass")
        if kind == "lowpass":
            return bandpass(e, *plan.lowpass, kind="lowpass")
        return bandpass(e, plan.highpass[0], plan.lowpass[1], kind="band")
    if method == "time_rotation":
        return time_rotation(e, seed=rng)
    return rotation3d(e, seed=rng)


@dataclass
class GaussianPerturbation:
    """Tensor-space augmenter: add ``scale * rms(batch)`` Gaussian noise."""

    scale: float = 0.05

    def __call__(self, batch: TensorBatch, rng: np.random.Generator) -> np.ndarray:
        t = batch.tensor
        rms = math.sqrt(float(np.mean(np.square(t))))
        return t + self.scale * rms * rng.standard_normal(t.shape)


@dataclass
class EpochAugmenter:
    """Signal-space augmenter: augment the raw epochs of a batch, then STFT."""

    epochs: Sequence[SignalEpoch]
    plan: AugmentationPlan
    spec: StftSpec

    def __call__(self, batch: TensorBatch, rng: np.random.Generator) -> np.ndarray:
        return tensorize_epochs([augment(self.epochs[i], self.plan, rng) for i in batch.indices],
                                self.spec)


def write_epoch(e: SignalEpoch, path) -> None:
    """Store ``e`` as an order-2 ``.dtz`` plus a ``.hdr`` sidecar with the rate."""
    path = Path(path)
    write_tensor(e.data, path)
    path.with_suffix(path.suffix + ".hdr").write_text(f"sample_rate = {e.sample_rate!r}\n")


def read_epoch(path) -> SignalEpoch:
    path = Path(path)
    data = read_tensor(path)
    if data.order != 2:
        raise ValueError(f"{path}: epoch files hold order-2 tensors, got order {data.order}")
    header = {}
    for line in path.with_suffix(path.suffix + ".hdr").read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            header[key.strip()] = value.strip()
    if "sample_rate" not in header:
        raise ValueError(f"{path}: sidecar header lacks sample_rate")
    return SignalEpoch(np.array(data), float(header["sample_rate"]))
