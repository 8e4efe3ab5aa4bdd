"""Alternative-image generators used for masking, and blur-strength calibration.

Three generators are supported: per-pixel uniform noise, the per-channel mean
of the image, and Gaussian blur. Blur strength is calibrated against the model
by requiring near-chance accuracy on fully blurred images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, Image

# Per-axis index mixed into per-sample seed derivations; keeps uniform noise
# streams disjoint from estimator noise streams under one master seed.
UNIFORM_STREAM = 5

PERTURBATION_KINDS = ("uniform", "constant", "blur")

#: Blur strengths swept during calibration on 32x32 inputs. The top entries
#: exceed the image side: residual low-frequency contrast decays only as
#: exp(-(pi*sigma/side)^2/2), and position-coded classes survive moderate blur.
DEFAULT_SIGMA_GRID_32 = (1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0)

DEFAULT_CHANCE_MARGIN = 0.10


class CalibrationError(RuntimeError):
    """No blur strength in the grid pushed accuracy down to chance level.

    Carries the full accuracy-vs-sigma sweep so the failure is diagnosable.
    """

    def __init__(self, message: str, sigmas: Sequence[float], accuracies: Sequence[float]):
        super().__init__(message)
        self.sigmas = tuple(float(s) for s in sigmas)
        self.accuracies = tuple(float(a) for a in accuracies)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps truncated at radius ceil(3 * sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def _correlate_axis(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = kernel.size // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(x, pad, mode="symmetric")
    out = np.zeros_like(x)
    window = [slice(None)] * x.ndim
    for i, w in enumerate(kernel):
        window[axis] = slice(i, i + x.shape[axis])
        out += w * padded[tuple(window)]
    return out


def blur_array(x: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian-blur the trailing (..., H, W, C) axes of an array.

    Runs two separable 1-D passes in float64 with mirrored boundaries, then
    clips to [0, 1] and casts back to the input dtype.
    """
    kernel = gaussian_kernel(sigma)
    work = x.astype(np.float64, copy=False)
    work = _correlate_axis(work, kernel, axis=-3)
    work = _correlate_axis(work, kernel, axis=-2)
    np.clip(work, 0.0, 1.0, out=work)
    return work.astype(x.dtype, copy=False)


def gaussian_blur(image: Image, sigma: float) -> Image:
    """Blur an image with a normalized Gaussian of standard deviation sigma."""
    return Image(blur_array(image.data, sigma))


def uniform_alternative(dims: tuple[int, int, int], rng_seed: int) -> Image:
    """Image with every channel value drawn i.i.d. from Uniform(0, 1)."""
    h, w, c = dims
    rng = np.random.default_rng(rng_seed)
    return Image(rng.random((h, w, c), dtype=np.float32))


def constant_alternative(image: Image, per_channel: bool = True) -> Image:
    """Image filled with the mean pixel value of the input.

    The mean is taken per channel by default; pass per_channel=False to use
    one global mean across all channels.
    """
    if per_channel:
        means = image.data.mean(axis=(0, 1), keepdims=True)
    else:
        means = np.full((1, 1, 1), image.data.mean(), dtype=image.data.dtype)
    return Image(np.broadcast_to(means, image.data.shape).astype(image.data.dtype))


@dataclass(frozen=True)
class Perturbation:
    """Tagged alternative-image generator.

    kind is one of "uniform", "constant", "blur". Blur requires sigma > 0;
    uniform draws per-sample noise from seeds derived in ``alternatives_batch``.
    ``per_channel`` only affects the constant generator.
    """

    kind: str
    sigma: Optional[float] = None
    per_channel: bool = True

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"kind must be one of {PERTURBATION_KINDS}")
        if self.kind == "blur":
            if self.sigma is None or self.sigma <= 0:
                raise ValueError("blur perturbation requires sigma > 0")

    @property
    def tag(self) -> str:
        if self.kind == "blur":
            return f"blur(sigma={float(self.sigma):g})"
        return self.kind

    def alternative(self, image: Image, rng_seed: int = 0) -> Image:
        """Alternative image for a single sample."""
        if self.kind == "uniform":
            return uniform_alternative(image.data.shape, rng_seed)
        if self.kind == "constant":
            return constant_alternative(image, per_channel=self.per_channel)
        return gaussian_blur(image, self.sigma)

    def alternatives_batch(self, images: np.ndarray, master_seed: int) -> np.ndarray:
        """Alternative images for a stacked (N, H, W, C) batch.

        Per-sample uniform noise is seeded as (master_seed, index, stream),
        so results do not depend on batching or evaluation order.
        """
        n, h, w, c = images.shape
        if self.kind == "blur":
            return blur_array(images, self.sigma)
        if self.kind == "constant":
            if self.per_channel:
                means = images.mean(axis=(1, 2), keepdims=True)
            else:
                means = images.mean(axis=(1, 2, 3), keepdims=True)
            return np.broadcast_to(means, images.shape).astype(images.dtype)
        out = np.empty_like(images)
        for i in range(n):
            rng = np.random.default_rng(
                np.random.SeedSequence((master_seed, i, UNIFORM_STREAM))
            )
            out[i] = rng.random((h, w, c), dtype=np.float32)
        return out


@dataclass(frozen=True)
class BlurCalibration:
    """Accuracy-vs-sigma sweep and the selected blur strength."""

    sigma: float
    sigmas: tuple[float, ...]
    accuracies: tuple[float, ...]
    threshold: float


def calibrate_blur_sigma(
    model,
    dataset: Dataset,
    sigma_grid: Sequence[float] | None = None,
    chance_margin: float = DEFAULT_CHANCE_MARGIN,
) -> BlurCalibration:
    """Pick the weakest blur that destroys the model's class information.

    Evaluates accuracy on fully blurred copies of the dataset for every sigma
    in the ascending grid and returns the smallest sigma whose accuracy is at
    most 1/K + chance_margin, together with the whole sweep. Every grid entry
    is evaluated even after the criterion is met.

    Raises:
        CalibrationError: if no sigma in the grid reaches near-chance accuracy.
    """
    from .nn import accuracy_from_logits

    if sigma_grid is None:
        sigma_grid = DEFAULT_SIGMA_GRID_32
    sigmas = [float(s) for s in sigma_grid]
    if not sigmas:
        raise ValueError("sigma grid must be nonempty")
    if sorted(sigmas) != sigmas:
        raise ValueError("sigma grid must be ascending")

    threshold = 1.0 / dataset.n_classes + chance_margin
    accuracies = []
    for sigma in sigmas:
        blurred = blur_array(dataset.images, sigma)
        logits = model.forward_batch(blurred)
        accuracies.append(accuracy_from_logits(logits, dataset.labels))

    for sigma, acc in zip(sigmas, accuracies):
        if acc <= threshold:
            return BlurCalibration(sigma, tuple(sigmas), tuple(accuracies), threshold)
    raise CalibrationError(
        f"no sigma in {sigmas} reached accuracy <= {threshold:.4f} "
        f"(best {min(accuracies):.4f})",
        sigmas,
        accuracies,
    )
