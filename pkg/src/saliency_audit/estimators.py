"""Pixel-importance estimators and channel reduction to 2-D saliency maps.

Five estimators are provided: plain class-score gradients, path-integrated
gradients against a baseline, noise-averaged gradients, their squared
variant, and a uniform-random baseline. Signed per-channel values are
reduced to a 2-D map by summing absolute values across channels.

Per-sample noise is seeded as (master_seed, sample_index, stream), so batched
results are identical regardless of chunking or thread count. The
SALIENCY_AUDIT_THREADS environment variable caps worker threads (0 = auto).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Image, SaliencyMap

SG_STREAM = 2
SQSG_STREAM = 3
RANDOM_STREAM = 4

ESTIMATOR_NAMES = ("VG", "IG", "SG", "SQ-SG", "random")

_STREAM_BY_NAME = {"SG": SG_STREAM, "SQ-SG": SQSG_STREAM, "random": RANDOM_STREAM}


@dataclass(frozen=True)
class EstimatorConfig:
    """Shared estimator settings.

    ig_baseline is the reference image for the path integral (None = black).
    sg_noise_sigma is expressed as a fraction of the [0, 1] value range.
    Noisy inputs are not clamped back into [0, 1] unless clamp_noisy_inputs
    is set.
    """

    ig_steps: int = 25
    ig_baseline: Optional[np.ndarray] = None
    sg_samples: int = 15
    sg_noise_sigma: float = 0.15
    seed: int = 0
    score_kind: str = "logit"
    clamp_noisy_inputs: bool = False

    def __post_init__(self):
        if self.ig_steps < 1:
            raise ValueError("ig_steps must be >= 1")
        if self.sg_samples < 1:
            raise ValueError("sg_samples must be >= 1")
        if self.sg_noise_sigma < 0:
            raise ValueError("sg_noise_sigma must be >= 0")


@dataclass(frozen=True)
class Estimator:
    """A named importance estimator with its configuration."""

    name: str
    config: EstimatorConfig = EstimatorConfig()

    def __post_init__(self):
        if self.name not in ESTIMATOR_NAMES:
            raise ValueError(f"estimator must be one of {ESTIMATOR_NAMES}")

    def maps_batch(self, model, images: np.ndarray, classes: np.ndarray, master_seed: int) -> np.ndarray:
        return saliency_maps_batch(model, images, classes, self.name, self.config, master_seed)


def default_estimators(config: EstimatorConfig = EstimatorConfig()) -> tuple[Estimator, ...]:
    return tuple(Estimator(name, config) for name in ESTIMATOR_NAMES)


def thread_count() -> int:
    """Worker-thread cap from SALIENCY_AUDIT_THREADS; 0 means auto, unset 1."""
    raw = os.environ.get("SALIENCY_AUDIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SALIENCY_AUDIT_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ValueError("SALIENCY_AUDIT_THREADS must be >= 0")
    if n == 0:
        return os.cpu_count() or 1
    return n


def reduce_channels(grad: np.ndarray) -> SaliencyMap:
    """Collapse an H x W x C tensor to per-pixel scores: sum of |channel|."""
    if grad.ndim != 3:
        raise ValueError(f"expected (H, W, C), got shape {grad.shape}")
    return SaliencyMap(np.abs(grad).sum(axis=-1))


def _reduce_batch(grads: np.ndarray) -> np.ndarray:
    return np.abs(grads).sum(axis=-1)


def normalize_scores(saliency: SaliencyMap) -> SaliencyMap:
    """Min-max normalize scores to [0, 1]; constant maps become all zeros."""
    scores = saliency.scores
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return SaliencyMap(np.zeros_like(scores))
    return SaliencyMap((scores - lo) / (hi - lo))


def normalize_scores_array(scores: np.ndarray) -> np.ndarray:
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.zeros_like(scores)
    return (scores - lo) / (hi - lo)


def _sample_rng(master_seed: int, sample_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed, sample_index, stream)))


def _vg_maps(model, images, classes, cfg):
    grads = model.input_gradient_batch(images, classes, cfg.score_kind)
    return _reduce_batch(grads)


def integrated_gradient_attributions_batch(
    model, images: np.ndarray, classes: np.ndarray, cfg: EstimatorConfig
) -> np.ndarray:
    """Signed (N, H, W, C) path-integral attributions.

    Gradients are averaged over the straight path from the baseline at the
    right-endpoint points k/m, k = 1..m, then scaled by (input - baseline).
    """
    if cfg.ig_baseline is None:
        baseline = np.zeros_like(images)
    else:
        baseline = np.broadcast_to(cfg.ig_baseline.astype(images.dtype), images.shape)
        if cfg.ig_baseline.shape != images.shape[1:]:
            raise ValueError(
                f"baseline shape {cfg.ig_baseline.shape} does not match image "
                f"shape {images.shape[1:]}"
            )
    m = cfg.ig_steps
    diff = images - baseline
    total = np.zeros_like(images)
    for k in range(1, m + 1):
        point = baseline + (k / m) * diff
        total += model.input_gradient_batch(point, classes, cfg.score_kind)
    return diff * total / m


def _ig_maps(model, images, classes, cfg):
    return _reduce_batch(integrated_gradient_attributions_batch(model, images, classes, cfg))


def _sg_maps(model, images, classes, cfg, master_seed, offset, squared):
    n, h, w, c = images.shape
    stream = SQSG_STREAM if squared else SG_STREAM
    sigma = cfg.sg_noise_sigma
    if sigma == 0.0:
        # all noise draws coincide, so a single clean evaluation is exact
        grads = model.input_gradient_batch(images, classes, cfg.score_kind)
        acc = np.square(grads) if squared else grads
        return _reduce_batch(acc)

    noise = np.empty((cfg.sg_samples, n, h, w, c), dtype=images.dtype)
    for i in range(n):
        rng = _sample_rng(master_seed, offset + i, stream)
        noise[:, i] = rng.normal(0.0, sigma, size=(cfg.sg_samples, h, w, c))

    acc = np.zeros_like(images)
    for j in range(cfg.sg_samples):
        noisy = images + noise[j]
        if cfg.clamp_noisy_inputs:
            noisy = np.clip(noisy, 0.0, 1.0)
        grads = model.input_gradient_batch(noisy, classes, cfg.score_kind)
        acc += np.square(grads) if squared else grads
    return _reduce_batch(acc / cfg.sg_samples)


def _random_maps(images, cfg, master_seed, offset):
    n, h, w, _ = images.shape
    maps = np.empty((n, h, w), dtype=np.float64)
    for i in range(n):
        rng = _sample_rng(master_seed, offset + i, RANDOM_STREAM)
        maps[i] = rng.random((h, w))
    return maps


def _maps_chunk(model, images, classes, name, cfg, master_seed, offset):
    if name == "VG":
        return _vg_maps(model, images, classes, cfg)
    if name == "IG":
        return _ig_maps(model, images, classes, cfg)
    if name == "SG":
        return _sg_maps(model, images, classes, cfg, master_seed, offset, squared=False)
    if name == "SQ-SG":
        return _sg_maps(model, images, classes, cfg, master_seed, offset, squared=True)
    if name == "random":
        return _random_maps(images, cfg, master_seed, offset)
    raise ValueError(f"unknown estimator {name!r}")


def saliency_maps_batch(
    model,
    images: np.ndarray,
    classes: np.ndarray,
    name: str,
    cfg: EstimatorConfig = EstimatorConfig(),
    master_seed: int = 0,
) -> np.ndarray:
    """(N, H, W) saliency maps for a stacked batch.

    Work is split into contiguous sample chunks across worker threads; the
    per-sample seed derivation keeps the output independent of the split.
    """
    classes = np.asarray(classes, dtype=np.int64)
    workers = min(thread_count(), images.shape[0]) or 1
    if workers == 1:
        return _maps_chunk(model, images, classes, name, cfg, master_seed, 0)

    bounds = np.linspace(0, images.shape[0], workers + 1, dtype=int)
    jobs = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
        parts = list(
            pool.map(
                lambda ab: _maps_chunk(
                    model, images[ab[0] : ab[1]], classes[ab[0] : ab[1]], name, cfg,
                    master_seed, ab[0],
                ),
                jobs,
            )
        )
    return np.concatenate(parts, axis=0)


def vanilla_gradient(model, image: Image, class_index: int, cfg: EstimatorConfig = EstimatorConfig()) -> SaliencyMap:
    """Saliency from the raw class-score gradient at the input."""
    grads = _vg_maps(model, image.data[None], np.array([class_index]), cfg)
    return SaliencyMap(grads[0])


def integrated_gradients(model, image: Image, class_index: int, cfg: EstimatorConfig = EstimatorConfig()) -> SaliencyMap:
    """Saliency from baseline-to-input path-integrated gradients."""
    maps = _ig_maps(model, image.data[None], np.array([class_index]), cfg)
    return SaliencyMap(maps[0])


def smoothgrad(model, image: Image, class_index: int, cfg: EstimatorConfig = EstimatorConfig()) -> SaliencyMap:
    """Saliency from gradients averaged over Gaussian-noised inputs."""
    maps = _sg_maps(
        model, image.data[None], np.array([class_index]), cfg, cfg.seed, 0, squared=False
    )
    return SaliencyMap(maps[0])


def squared_smoothgrad(model, image: Image, class_index: int, cfg: EstimatorConfig = EstimatorConfig()) -> SaliencyMap:
    """Like ``smoothgrad`` but each noisy gradient is squared before averaging."""
    maps = _sg_maps(
        model, image.data[None], np.array([class_index]), cfg, cfg.seed, 0, squared=True
    )
    return SaliencyMap(maps[0])


def random_saliency(dims: tuple[int, int], rng_seed: int) -> SaliencyMap:
    """Baseline map of i.i.d. Uniform(0, 1) scores."""
    h, w = dims
    return SaliencyMap(np.random.default_rng(rng_seed).random((h, w)))
