"""Core value types (images, saliency maps, masks, pixel rankings) and the
masking primitives shared by every evaluation pipeline.

All types are immutable after construction (backing arrays are frozen) and
all operations are pure, so values can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

Direction = Literal["MiF", "LiF"]

DIRECTIONS: tuple[Direction, Direction] = ("MiF", "LiF")


def _frozen(data: np.ndarray, dtype=None) -> np.ndarray:
    out = np.array(data, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Image:
    """H x W x C float image with all values finite and inside [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"image must be (H, W, C), got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        h, w, c = arr.shape
        if h < 1 or w < 1 or c not in (1, 3):
            raise ValueError(f"invalid image dims {arr.shape}; channels must be 1 or 3")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image values must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(arr, dtype=arr.dtype))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """H x W grid of non-negative, finite per-pixel importance scores."""

    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores)
        if arr.ndim != 2:
            raise ValueError(f"saliency map must be (H, W), got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("saliency scores must be finite")
        if arr.min() < 0.0:
            raise ValueError("saliency scores must be non-negative")
        object.__setattr__(self, "scores", _frozen(arr, dtype=arr.dtype))

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True, eq=False)
class Mask:
    """H x W binary array: 0 marks pixels to replace, 1 pixels to keep."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ValueError(f"mask must be (H, W), got shape {arr.shape}")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("mask entries must be exactly 0 or 1")
        object.__setattr__(self, "bits", _frozen(arr, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def zero_count(self) -> int:
        return int(self.bits.size - self.bits.sum())


@dataclass(frozen=True, eq=False)
class PixelRanking:
    """Permutation of the H*W row-major pixel indices, most-to-least relevant
    for masking in the given direction."""

    order: np.ndarray
    direction: Direction
    height: int
    width: int

    def __post_init__(self):
        arr = np.asarray(self.order, dtype=np.int64)
        n = self.height * self.width
        if arr.shape != (n,):
            raise ValueError(f"order must have {n} entries, got {arr.shape}")
        if not np.array_equal(np.sort(arr), np.arange(n)):
            raise ValueError("order must be a permutation of the pixel indices")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        object.__setattr__(self, "order", _frozen(arr, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class LabeledSample:
    image: Image
    label: int
    truth_mask: Optional[Mask] = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered image/label collection with a fixed class count.

    Images are stacked as one (N, H, W, C) array so batched pipelines can
    run without per-sample re-validation; ``sample`` exposes the value view.
    ``truth_masks`` (N, H, W) marks ground-truth important pixels with 0
    where available (synthetic data only).
    """

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    truth_masks: Optional[np.ndarray] = None

    def __post_init__(self):
        imgs = np.asarray(self.images)
        labels = np.asarray(self.labels, dtype=np.int64)
        if imgs.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got {imgs.shape}")
        if labels.shape != (imgs.shape[0],):
            raise ValueError("labels must be one integer per image")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError("labels must lie in [0, n_classes)")
        if not np.all(np.isfinite(imgs)) or imgs.min() < 0.0 or imgs.max() > 1.0:
            raise ValueError("image values must be finite and in [0, 1]")
        object.__setattr__(self, "images", _frozen(imgs, dtype=imgs.dtype))
        object.__setattr__(self, "labels", _frozen(labels, dtype=np.int64))
        if self.truth_masks is not None:
            masks = np.asarray(self.truth_masks)
            if masks.shape != imgs.shape[:3]:
                raise ValueError("truth masks must be (N, H, W)")
            object.__setattr__(self, "truth_masks", _frozen(masks, dtype=np.uint8))

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    @property
    def channels(self) -> int:
        return self.images.shape[3]

    def sample(self, i: int) -> LabeledSample:
        mask = Mask(self.truth_masks[i]) if self.truth_masks is not None else None
        return LabeledSample(Image(self.images[i]), int(self.labels[i]), mask)


def apply_mask(image: Image, mask: Mask, alternative: Image) -> Image:
    """Keep image pixels where mask is 1, take the alternative where it is 0.

    The mask acts on whole pixels: all channels of a pixel are kept or
    replaced together. Selection is exact (no arithmetic on pixel values).
    """
    if (mask.height, mask.width) != (image.height, image.width):
        raise ValueError(
            f"mask shape {(mask.height, mask.width)} does not match image "
            f"{(image.height, image.width)}"
        )
    if alternative.data.shape != image.data.shape:
        raise ValueError(
            f"alternative shape {alternative.data.shape} does not match image "
            f"{image.data.shape}"
        )
    keep = mask.bits[:, :, None] == 1
    return Image(np.where(keep, image.data, alternative.data))


def rank_pixels(saliency: SaliencyMap, direction: Direction) -> PixelRanking:
    """Rank pixel indices by score: descending for MiF, ascending for LiF.

    Ties are broken by ascending row-major pixel index, so equal inputs
    always produce byte-equal rankings.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    flat = saliency.scores.reshape(-1)
    key = -flat if direction == "MiF" else flat
    order = np.argsort(key, kind="stable")
    return PixelRanking(order, direction, saliency.height, saliency.width)


def mask_from_ranking(ranking: PixelRanking, n: float) -> Mask:
    """Mask the first round(n * H * W) pixels of the ranking with 0.

    Rounding is to the nearest integer (ties to even) so that the n and
    1 - n masks stay complementary whenever the rounded counts add up.
    """
    if not 0.0 <= n <= 1.0:
        raise ValueError(f"masked fraction must lie in [0, 1], got {n}")
    total = ranking.order.size
    k = int(np.rint(n * total))
    bits = np.ones(total, dtype=np.uint8)
    bits[ranking.order[:k]] = 0
    return Mask(bits.reshape(ranking.height, ranking.width))


def shift_mask(mask: Mask, dx: int, dy: int) -> Mask:
    """Translate the mask by (dx, dy) pixels toroidally.

    Pixels shifted past one edge reenter at the opposite edge, so the
    number of masked pixels is preserved for any integer shift.
    """
    return Mask(np.roll(mask.bits, shift=(int(dy), int(dx)), axis=(0, 1)))


def masked_fraction_count(n: float, height: int, width: int) -> int:
    """Number of pixels masked at fraction n on an H x W grid."""
    if not 0.0 <= n <= 1.0:
        raise ValueError(f"masked fraction must lie in [0, 1], got {n}")
    return int(np.rint(n * height * width))
