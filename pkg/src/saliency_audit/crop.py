"""Crop-and-rescale evaluation of importance estimators.

For each image: select a salient pixel region, take the tightest rectangle
around it, rescale that crop back to full size, and score the true class.
The comparison metric is log(area fraction) - log(class probability);
smaller is better (small crops that keep the class score high).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, Image, SaliencyMap
from .estimators import Estimator, normalize_scores_array
from .nn import softmax

SCORE_FLOOR = 1e-12


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle (top/left inclusive)."""

    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.top < 0 or self.left < 0 or self.height < 1 or self.width < 1:
            raise ValueError(f"degenerate rectangle {self}")

    def area_fraction(self, image_height: int, image_width: int) -> float:
        return (self.height * self.width) / (image_height * image_width)


@dataclass(frozen=True)
class RegionMethod:
    """Salient-region rule: score threshold or fixed top fraction.

    "threshold" keeps pixels whose min-max-normalized score reaches
    t_rel x the maximum; "topfrac" keeps the top round(frac * H * W) pixels
    and then drops spatial outliers outside the [trim] coordinate
    percentiles.
    """

    kind: str = "threshold"
    t_rel: float = 0.2
    frac: float = 0.2
    trim: tuple[float, float] = (1.0, 99.0)

    def __post_init__(self):
        if self.kind not in ("threshold", "topfrac"):
            raise ValueError("kind must be 'threshold' or 'topfrac'")
        if not 0.0 < self.t_rel <= 1.0:
            raise ValueError("t_rel must lie in (0, 1]")
        if not 0.0 < self.frac <= 1.0:
            raise ValueError("frac must lie in (0, 1]")
        lo, hi = self.trim
        if not 0.0 <= lo <= hi <= 100.0:
            raise ValueError("trim percentiles must satisfy 0 <= lo <= hi <= 100")

    @property
    def tag(self) -> str:
        return self.kind

    def select(self, scores: np.ndarray) -> np.ndarray:
        if self.kind == "threshold":
            return salient_region_threshold_array(scores, self.t_rel)
        return salient_region_topfrac_array(scores, self.frac, self.trim)


def salient_region_threshold_array(scores: np.ndarray, t_rel: float = 0.2) -> np.ndarray:
    """Boolean region of pixels scoring at least t_rel x the map maximum.

    Scores are min-max normalized first, so the rule is invariant under
    positive rescaling; the maximum pixel always qualifies (constant maps
    select everything).
    """
    if not 0.0 < t_rel <= 1.0:
        raise ValueError("t_rel must lie in (0, 1]")
    norm = normalize_scores_array(scores)
    return norm >= t_rel * norm.max()


def salient_region_threshold(saliency: SaliencyMap, t_rel: float = 0.2) -> np.ndarray:
    return salient_region_threshold_array(saliency.scores, t_rel)


def _nearest_rank(sorted_vals: np.ndarray, pct: float) -> float:
    if pct <= 0.0:
        return float(sorted_vals[0])
    rank = math.ceil(pct / 100.0 * sorted_vals.size)
    return float(sorted_vals[max(rank, 1) - 1])


def salient_region_topfrac_array(
    scores: np.ndarray, frac: float = 0.2, trim: tuple[float, float] = (1.0, 99.0)
) -> np.ndarray:
    """Boolean region of the top round(frac * H * W) pixels, outliers trimmed.

    Selection follows the MiF ranking (ties by ascending row-major index);
    at least one pixel is always kept. Selected pixels whose row or column
    falls below the lower or above the upper nearest-rank percentile of the
    selection's coordinates are removed, unless that would empty the region.
    """
    if not 0.0 < frac <= 1.0:
        raise ValueError("frac must lie in (0, 1]")
    h, w = scores.shape
    k = max(1, int(np.rint(frac * h * w)))
    order = np.argsort(-scores.reshape(-1), kind="stable")[:k]
    region = np.zeros(h * w, dtype=bool)
    region[order] = True
    region = region.reshape(h, w)

    rows, cols = np.nonzero(region)
    lo, hi = trim
    r_lo, r_hi = _nearest_rank(np.sort(rows), lo), _nearest_rank(np.sort(rows), hi)
    c_lo, c_hi = _nearest_rank(np.sort(cols), lo), _nearest_rank(np.sort(cols), hi)
    keep = (rows >= r_lo) & (rows <= r_hi) & (cols >= c_lo) & (cols <= c_hi)
    if not keep.any():
        return region
    trimmed = np.zeros_like(region)
    trimmed[rows[keep], cols[keep]] = True
    return trimmed


def salient_region_topfrac(
    saliency: SaliencyMap, frac: float = 0.2, trim: tuple[float, float] = (1.0, 99.0)
) -> np.ndarray:
    return salient_region_topfrac_array(saliency.scores, frac, trim)


def bounding_crop(pixels: np.ndarray, dims: tuple[int, int]) -> Rect:
    """Tightest rectangle containing every pixel of a boolean (H, W) region."""
    h, w = dims
    if pixels.shape != (h, w):
        raise ValueError(f"region shape {pixels.shape} does not match dims {dims}")
    rows, cols = np.nonzero(pixels)
    if rows.size == 0:
        raise ValueError("cannot bound an empty pixel set")
    top, bottom = int(rows.min()), int(rows.max())
    left, right = int(cols.min()), int(cols.max())
    return Rect(top, left, bottom - top + 1, right - left + 1)


def _bilinear_axis_coords(out_len: int, in_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if out_len == 1 or in_len == 1:
        src = np.zeros(out_len)
    else:
        src = np.arange(out_len) * ((in_len - 1) / (out_len - 1))
    i0 = np.clip(np.floor(src).astype(np.int64), 0, in_len - 1)
    i1 = np.minimum(i0 + 1, in_len - 1)
    t = src - i0
    return i0, i1, t


def resample_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of (H, W, C) data with endpoints pinned to corners."""
    in_h, in_w = data.shape[:2]
    r0, r1, tr = _bilinear_axis_coords(out_h, in_h)
    c0, c1, tc = _bilinear_axis_coords(out_w, in_w)
    rows = data[r0] * (1.0 - tr)[:, None, None] + data[r1] * tr[:, None, None]
    out = rows[:, c0] * (1.0 - tc)[None, :, None] + rows[:, c1] * tc[None, :, None]
    return out


def crop_and_rescale(image: Image, rect: Rect) -> Image:
    """Crop the rectangle and stretch it back to the full image size."""
    if rect.top + rect.height > image.height or rect.left + rect.width > image.width:
        raise ValueError(f"rectangle {rect} exceeds image bounds")
    crop = image.data[
        rect.top : rect.top + rect.height, rect.left : rect.left + rect.width, :
    ].astype(np.float64)
    out = resample_bilinear(crop, image.height, image.width)
    return Image(np.clip(out, 0.0, 1.0).astype(image.data.dtype))


def crop_score(area_fraction: float, class_score: float) -> float:
    """log(area) - log(score): increasing in area, decreasing in score."""
    return math.log(area_fraction) - math.log(max(class_score, SCORE_FLOOR))


@dataclass(frozen=True)
class CropStats:
    """Aggregate crop-evaluation numbers for one estimator and region rule.

    ``mean_s`` averages the per-sample metric; ``s_from_means`` recomputes it
    from the mean area and mean score instead. ``pct_pixels`` is the average
    share of pixels inside the salient region, in percent.
    """

    estimator: str
    region_method: str
    mean_score: float
    mean_area: float
    mean_s: float
    ci_half: float
    pct_pixels: float
    s_from_means: float
    original_mean_score: float


def crop_metric_eval(
    model,
    dataset: Dataset,
    estimator: Estimator,
    region_method: RegionMethod = RegionMethod(),
    master_seed: int = 0,
    maps: Optional[np.ndarray] = None,
) -> CropStats:
    """Evaluate one estimator under the crop-and-rescale protocol.

    The class score is the softmax probability of the true label on the
    cropped-and-rescaled image, floored at 1e-12 before the log. The 95%
    confidence half-width uses the normal approximation over per-sample
    metric values.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if maps is None:
        maps = estimator.maps_batch(model, dataset.images, dataset.labels, master_seed)

    n, h, w, _ = dataset.images.shape
    resampled = np.empty_like(dataset.images)
    areas = np.empty(n, dtype=np.float64)
    pix_share = np.empty(n, dtype=np.float64)
    for i in range(n):
        region = region_method.select(maps[i])
        rect = bounding_crop(region, (h, w))
        crop = dataset.images[i, rect.top : rect.top + rect.height,
                              rect.left : rect.left + rect.width, :].astype(np.float64)
        resampled[i] = np.clip(resample_bilinear(crop, h, w), 0.0, 1.0)
        areas[i] = rect.area_fraction(h, w)
        pix_share[i] = region.mean()

    probs = softmax(model.forward_batch(resampled).astype(np.float64))
    scores = np.maximum(probs[np.arange(n), dataset.labels], SCORE_FLOOR)
    s_values = np.log(areas) - np.log(scores)
    orig_probs = softmax(model.forward_batch(dataset.images).astype(np.float64))
    orig_scores = orig_probs[np.arange(n), dataset.labels]

    std = float(s_values.std(ddof=1)) if n > 1 else 0.0
    return CropStats(
        estimator=estimator.name,
        region_method=region_method.tag,
        mean_score=float(scores.mean()),
        mean_area=float(areas.mean()),
        mean_s=float(s_values.mean()),
        ci_half=1.96 * std / math.sqrt(n),
        pct_pixels=float(pix_share.mean() * 100.0),
        s_from_means=crop_score(float(areas.mean()), float(scores.mean())),
        original_mean_score=float(orig_scores.mean()),
    )
