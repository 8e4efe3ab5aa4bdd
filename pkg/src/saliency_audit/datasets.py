"""Dataset generation and ingestion.

The synthetic quadrant task places one bright patch in the quadrant matching
the label on a noisy background, and records the patch pixels as a
ground-truth importance mask. External data can be read from IDX image/label
pairs or from an image directory with a labels.csv manifest.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Dataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Input dataset file is missing pieces or violates its format."""


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic quadrant dataset."""

    side: int = 32
    n_classes: int = 4
    patch_side: int = 8
    # high enough that single bright pixels are ambiguous and the classifier
    # must aggregate patch area, giving graded (not all-or-nothing) masking
    # response; patch values stay well separated at >= 0.9
    noise_amplitude: float = 0.6
    count: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_classes != 4:
            raise ValueError("the quadrant task is defined for exactly 4 classes")
        if self.side % 2:
            raise ValueError("image side must be even")
        if not 1 <= self.patch_side <= self.side // 2:
            raise ValueError("patch must fit inside one quadrant")
        if not 0.0 <= self.noise_amplitude < 0.9:
            raise ValueError("noise amplitude must lie in [0, 0.9)")
        if self.count < 1:
            raise ValueError("count must be positive")


def synth_dataset(config: SynthConfig) -> Dataset:
    """Generate the quadrant dataset with ground-truth patch masks.

    Labels cycle 0..3 so classes stay balanced up to rounding. Each image is
    uniform background noise in [0, noise_amplitude] with one patch of values
    in [0.9, 1] placed uniformly at random inside the label's quadrant. The
    truth mask holds 0 on the patch pixels and 1 elsewhere.
    """
    rng = np.random.default_rng(np.random.SeedSequence((config.seed,)))
    side, patch = config.side, config.patch_side
    half = side // 2
    images = np.empty((config.count, side, side, 1), dtype=np.float32)
    labels = np.arange(config.count, dtype=np.int64) % config.n_classes
    masks = np.ones((config.count, side, side), dtype=np.uint8)

    for i in range(config.count):
        img = rng.uniform(0.0, config.noise_amplitude, size=(side, side, 1))
        qr, qc = divmod(int(labels[i]), 2)
        top = qr * half + int(rng.integers(0, half - patch + 1))
        left = qc * half + int(rng.integers(0, half - patch + 1))
        img[top : top + patch, left : left + patch, 0] = rng.uniform(
            0.9, 1.0, size=(patch, patch)
        )
        images[i] = img.astype(np.float32)
        masks[i, top : top + patch, left : left + patch] = 0

    return Dataset(images, labels, config.n_classes, truth_masks=masks)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write (N, H, W) or (N, H, W, 1) float [0,1] images as u8 IDX."""
    arr = np.asarray(images)
    if arr.ndim == 4:
        if arr.shape[3] != 1:
            raise DataFormatError("IDX image export supports single-channel data only")
        arr = arr[:, :, :, 0]
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    n, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(data.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    data = np.asarray(labels)
    if data.min() < 0 or data.max() > 255:
        raise DataFormatError("IDX labels must fit in one unsigned byte")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, data.size))
        fh.write(data.astype(np.uint8).tobytes())


def read_idx_images(path) -> np.ndarray:
    """Read a big-endian u8 IDX image file into (N, H, W, 1) float32 in [0,1]."""
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DataFormatError(f"{path}: too short for an IDX image header")
    magic, n, h, w = struct.unpack_from(">IIII", raw, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad IDX image magic 0x{magic:08x}")
    expected = 16 + n * h * w
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, h, w)
    return (data.astype(np.float32) / 255.0)[:, :, :, None]


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DataFormatError(f"{path}: too short for an IDX label header")
    magic, n = struct.unpack_from(">II", raw, 0)
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad IDX label magic 0x{magic:08x}")
    if len(raw) != 8 + n:
        raise DataFormatError(f"{path}: expected {8 + n} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def _read_bytes(path) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p.read_bytes()


def load_idx_dataset(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    if labels.size and labels.max() >= n_classes:
        raise DataFormatError(
            f"label {int(labels.max())} out of range for {n_classes} classes"
        )
    return Dataset(images, labels, n_classes)


def load_directory_dataset(directory, n_classes: int | None = None) -> Dataset:
    """Load PNG/PPM images listed in <directory>/labels.csv (filename,label)."""
    from PIL import Image as PILImage

    root = Path(directory)
    manifest = root / "labels.csv"
    if not manifest.is_file():
        raise FileNotFoundError(f"no labels.csv in {root}")

    entries = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"filename", "label"} <= set(reader.fieldnames):
            raise DataFormatError("labels.csv must have 'filename' and 'label' columns")
        for row in reader:
            entries.append((row["filename"], int(row["label"])))
    if not entries:
        raise DataFormatError(f"{manifest}: no samples listed")

    missing = [name for name, _ in entries if not (root / name).is_file()]
    if missing:
        raise FileNotFoundError(f"listed files missing from {root}: {', '.join(missing)}")

    images = []
    for name, _ in entries:
        with PILImage.open(root / name) as img:
            mode = "L" if img.mode in ("1", "L", "I", "I;16", "F") else "RGB"
            arr = np.asarray(img.convert(mode), dtype=np.float32) / 255.0
        if arr.ndim == 2:
            arr = arr[:, :, None]
        images.append(arr)

    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DataFormatError(f"inconsistent image dims in {root}: {sorted(shapes)}")
    labels = np.array([label for _, label in entries], dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if labels.max() >= n_classes or labels.min() < 0:
        raise DataFormatError(f"labels out of range for {n_classes} classes")
    return Dataset(np.stack(images), labels, n_classes)
