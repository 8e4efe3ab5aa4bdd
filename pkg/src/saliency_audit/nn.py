"""Compact differentiable classifiers implemented directly on numpy.

Two model families are provided: a small conv-relu-maxpool CNN trained with
mini-batch SGD, and a glass-box linear classifier whose input gradients are
known analytically. Both expose class scores (logits and softmax
probabilities) and exact input gradients for either score kind.

Training and evaluation run in 32-bit arithmetic; ``astype(np.float64)``
yields a 64-bit copy for gradient-check oracles.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, Image

INIT_STREAM = 0
SHUFFLE_STREAM = 1

MODEL_MAGIC = b"SALM"
MODEL_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


class ModelFormatError(ValueError):
    """Model file is malformed or has an unsupported version."""


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class ForwardResult:
    """Per-class logits and their softmax probabilities for one image."""

    logits: np.ndarray
    probabilities: np.ndarray

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.logits))


@dataclass(frozen=True)
class ConvBlock:
    """One conv(kernel, channels) -> relu -> maxpool(2) stage."""

    kernel: int
    channels: int

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd and positive")
        if self.channels < 1:
            raise ValueError("channel count must be positive")


@dataclass(frozen=True)
class Architecture:
    """Layer listing for the CNN: conv blocks, then a dense softmax head."""

    input_shape: tuple[int, int, int]
    blocks: tuple[ConvBlock, ...]
    n_classes: int

    def __post_init__(self):
        h, w, c = self.input_shape
        if c not in (1, 3):
            raise ValueError("input channels must be 1 or 3")
        for _ in self.blocks:
            if h % 2 or w % 2:
                raise ValueError("input dims must halve cleanly at every pool")
            h //= 2
            w //= 2
        if self.n_classes < 2:
            raise ValueError("need at least two classes")

    @property
    def feature_size(self) -> int:
        h, w, c = self.input_shape
        for block in self.blocks:
            h //= 2
            w //= 2
            c = block.channels
        return h * w * c

    def weight_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        cin = self.input_shape[2]
        for block in self.blocks:
            shapes.append((block.kernel, block.kernel, cin, block.channels))
            shapes.append((block.channels,))
            cin = block.channels
        shapes.append((self.feature_size, self.n_classes))
        shapes.append((self.n_classes,))
        return shapes


def default_architecture(side: int = 32, channels: int = 1, n_classes: int = 4) -> Architecture:
    return Architecture(
        input_shape=(side, side, channels),
        blocks=(ConvBlock(3, 8), ConvBlock(3, 16)),
        n_classes=n_classes,
    )


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Stack same-padded (kh x kw) neighborhoods as rows: (N*H*W, kh*kw*C)."""
    n, h, w, c = x.shape
    p = kh // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = np.empty((n, h, w, kh * kw, c), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, :, di * kw + dj, :] = xp[:, di : di + h, dj : dj + w, :]
    return cols.reshape(n * h * w, kh * kw * c)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same-padded 2-D convolution as one im2col matmul; cols kept for reuse."""
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    cols = _im2col(x, kh, kw)
    out = cols @ w.reshape(kh * kw * cin, cout) + b
    return out.reshape(n, h, wd, cout), cols


def _conv_backward(
    dout: np.ndarray,
    cols: np.ndarray,
    w: np.ndarray,
    in_shape: tuple,
    want_params: bool,
) -> tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = in_shape
    p = kh // 2
    dout2 = dout.reshape(n * h * wd, cout)
    dw = db = None
    if want_params:
        dw = (cols.T @ dout2).reshape(kh, kw, cin, cout)
        db = dout2.sum(axis=0)
    dcols = (dout2 @ w.reshape(kh * kw * cin, cout).T).reshape(n, h, wd, kh * kw, cin)
    dxp = np.zeros((n, h + 2 * p, wd + 2 * p, cin), dtype=dout.dtype)
    for di in range(kh):
        for dj in range(kw):
            dxp[:, di : di + h, dj : dj + wd, :] += dcols[:, :, :, di * kw + dj, :]
    return dxp[:, p : p + h, p : p + wd, :], dw, db


def _pool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 stride-2 max pool; returns output and flat argmax per window."""
    n, h, w, c = x.shape
    windows = (
        x.reshape(n, h // 2, 2, w // 2, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, h // 2, w // 2, 4, c)
    )
    # argmax picks the first maximal entry in window scan order at ties
    idx = windows.argmax(axis=3)
    out = np.take_along_axis(windows, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, idx


def _pool_backward(dout: np.ndarray, idx: np.ndarray, in_shape: tuple) -> np.ndarray:
    n, h, w, c = in_shape
    dwindows = np.zeros((n, h // 2, w // 2, 4, c), dtype=dout.dtype)
    np.put_along_axis(dwindows, idx[:, :, :, None, :], dout[:, :, :, None, :], axis=3)
    return (
        dwindows.reshape(n, h // 2, w // 2, 2, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, h, w, c)
    )


@dataclass(frozen=True, eq=False)
class ConvNet:
    """conv-relu-maxpool stack with a dense softmax head."""

    arch: Architecture
    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        shapes = self.arch.weight_shapes()
        if len(self.weights) != len(shapes):
            raise ValueError(f"expected {len(shapes)} weight arrays, got {len(self.weights)}")
        for arr, shape in zip(self.weights, shapes):
            if arr.shape != shape:
                raise ValueError(f"weight shape {arr.shape} does not match {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError("weights must be finite")

    @property
    def n_classes(self) -> int:
        return self.arch.n_classes

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    def astype(self, dtype) -> "ConvNet":
        return ConvNet(self.arch, tuple(w.astype(dtype) for w in self.weights))

    def _check_input(self, x: np.ndarray):
        if x.shape[1:] != self.arch.input_shape:
            raise ValueError(
                f"input shape {x.shape[1:]} does not match model input "
                f"{self.arch.input_shape}"
            )

    def _forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        x = x.astype(self.dtype, copy=False)
        self._check_input(x)
        cache = []
        act = x
        n_blocks = len(self.arch.blocks)
        for i in range(n_blocks):
            w, b = self.weights[2 * i], self.weights[2 * i + 1]
            pre, cols = _conv_forward(act, w, b)
            relu = np.maximum(pre, 0)
            pooled, idx = _pool_forward(relu)
            cache.append((cols, act.shape, pre, idx))
            act = pooled
        wd, bd = self.weights[-2], self.weights[-1]
        flat = act.reshape(act.shape[0], -1)
        logits = flat @ wd + bd
        cache.append((flat, act.shape))
        return logits, cache

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Logits for a stacked (N, H, W, C) batch."""
        logits, _ = self._forward_cached(x)
        return logits

    def forward(self, image: Image) -> ForwardResult:
        logits = self.forward_batch(image.data[None])[0]
        return ForwardResult(logits, softmax(logits))

    def _backward(
        self, cache: list, dlogits: np.ndarray, want_params: bool
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        flat, act_shape = cache[-1]
        wd = self.weights[-2]
        grads: list[np.ndarray] = []
        if want_params:
            grads = [flat.T @ dlogits, dlogits.sum(axis=0)]
        dact = (dlogits @ wd.T).reshape(act_shape)
        for i in reversed(range(len(self.arch.blocks))):
            cols, in_shape, pre, idx = cache[i]
            drelu = _pool_backward(dact, idx, pre.shape)
            dpre = drelu * (pre > 0)
            w = self.weights[2 * i]
            dact, dw, db = _conv_backward(dpre, cols, w, in_shape, want_params)
            if want_params:
                grads = [dw, db] + grads
        return dact, grads

    def input_gradient_batch(
        self, x: np.ndarray, classes: np.ndarray, score_kind: str = "logit"
    ) -> np.ndarray:
        """d(score of the given class) / d(input) for every sample.

        score_kind "logit" differentiates the pre-softmax class score,
        "probability" the softmax output of that class.
        """
        classes = np.asarray(classes, dtype=np.int64)
        if classes.min() < 0 or classes.max() >= self.n_classes:
            raise ValueError("class index out of range")
        logits, cache = self._forward_cached(x)
        upstream = _score_upstream(logits, classes, score_kind)
        dx, _ = self._backward(cache, upstream, want_params=False)
        return dx

    def input_gradient(self, image: Image, class_index: int, score_kind: str = "logit") -> np.ndarray:
        return self.input_gradient_batch(
            image.data[None], np.array([class_index]), score_kind
        )[0]

    def loss_and_param_grads(
        self, x: np.ndarray, labels: np.ndarray
    ) -> tuple[float, list[np.ndarray]]:
        """Mean cross-entropy over the batch and gradients for every weight."""
        logits, cache = self._forward_cached(x)
        probs = softmax(logits)
        n = x.shape[0]
        eps = np.finfo(probs.dtype).tiny
        loss = float(-np.log(np.maximum(probs[np.arange(n), labels], eps)).mean())
        dlogits = probs
        dlogits[np.arange(n), labels] -= 1
        dlogits /= n
        _, grads = self._backward(cache, dlogits, want_params=True)
        return loss, grads


def _score_upstream(logits: np.ndarray, classes: np.ndarray, score_kind: str) -> np.ndarray:
    n, k = logits.shape
    if score_kind == "logit":
        upstream = np.zeros_like(logits)
        upstream[np.arange(n), classes] = 1.0
        return upstream
    if score_kind == "probability":
        probs = softmax(logits)
        pc = probs[np.arange(n), classes][:, None]
        upstream = -pc * probs
        upstream[np.arange(n), classes] += pc[:, 0]
        return upstream
    raise ValueError(f"score_kind must be 'logit' or 'probability', got {score_kind!r}")


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Glass-box classifier: logits are an affine map of the flattened input.

    Input gradients are exact (the weight rows themselves), which makes this
    the reference oracle for every gradient-based estimator.
    """

    weights: np.ndarray  # (K, H*W*C)
    bias: np.ndarray  # (K,)
    input_shape: tuple[int, int, int]

    def __post_init__(self):
        h, w, c = self.input_shape
        if self.weights.shape != (self.bias.shape[0], h * w * c):
            raise ValueError("weight shape does not match input shape / classes")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("weights must be finite")

    @property
    def n_classes(self) -> int:
        return self.bias.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.weights.dtype

    def astype(self, dtype) -> "LinearModel":
        return LinearModel(self.weights.astype(dtype), self.bias.astype(dtype), self.input_shape)

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match {self.input_shape}")
        flat = x.reshape(x.shape[0], -1).astype(self.dtype, copy=False)
        return flat @ self.weights.T + self.bias

    def forward(self, image: Image) -> ForwardResult:
        logits = self.forward_batch(image.data[None])[0]
        return ForwardResult(logits, softmax(logits))

    def input_gradient_batch(
        self, x: np.ndarray, classes: np.ndarray, score_kind: str = "logit"
    ) -> np.ndarray:
        classes = np.asarray(classes, dtype=np.int64)
        if classes.min() < 0 or classes.max() >= self.n_classes:
            raise ValueError("class index out of range")
        n = x.shape[0]
        if score_kind == "logit":
            flat = self.weights[classes]
        else:
            logits = self.forward_batch(x)
            upstream = _score_upstream(logits, classes, score_kind)
            flat = upstream @ self.weights
        return flat.reshape((n,) + self.input_shape)

    def input_gradient(self, image: Image, class_index: int, score_kind: str = "logit") -> np.ndarray:
        return self.input_gradient_batch(
            image.data[None], np.array([class_index]), score_kind
        )[0]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 64
    learning_rate: float = 0.05
    optimizer: str = "momentum"  # "sgd" | "momentum"
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("hyperparameters must be positive")
        if self.optimizer not in ("sgd", "momentum"):
            raise ValueError("optimizer must be 'sgd' or 'momentum'")


@dataclass(frozen=True, eq=False)
class TrainResult:
    model: ConvNet
    epoch_losses: tuple[float, ...]


def init_weights(arch: Architecture, seed: int) -> tuple[np.ndarray, ...]:
    """He-normal conv/dense weights, zero biases, in float32."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, INIT_STREAM)))
    weights = []
    for shape in arch.weight_shapes():
        if len(shape) == 1:
            weights.append(np.zeros(shape, dtype=np.float32))
        else:
            fan_in = int(np.prod(shape[:-1]))
            std = np.sqrt(2.0 / fan_in)
            weights.append(rng.normal(0.0, std, size=shape).astype(np.float32))
    return tuple(weights)


def train(
    dataset: Dataset,
    config: TrainConfig = TrainConfig(),
    arch: Optional[Architecture] = None,
) -> TrainResult:
    """Train the CNN with seeded mini-batch SGD; bit-reproducible per seed.

    Raises:
        TrainingDivergedError: if any batch loss turns non-finite.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    if arch is None:
        arch = default_architecture(
            side=dataset.height, channels=dataset.channels, n_classes=dataset.n_classes
        )
    if (dataset.height, dataset.width, dataset.channels) != arch.input_shape:
        raise ValueError("dataset dims do not match the architecture input")

    weights = [w.copy() for w in init_weights(arch, config.seed)]
    velocity = [np.zeros_like(w) for w in weights]
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((config.seed, SHUFFLE_STREAM)))
    x = dataset.images.astype(np.float32, copy=False)
    y = dataset.labels

    epoch_losses = []
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(len(dataset))
        batch_losses = []
        for start in range(0, len(dataset), config.batch_size):
            take = order[start : start + config.batch_size]
            model = ConvNet(arch, tuple(weights))
            loss, grads = model.loss_and_param_grads(x[take], y[take])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became non-finite ({loss})")
            batch_losses.append(loss)
            for i, g in enumerate(grads):
                if config.optimizer == "momentum":
                    velocity[i] = config.momentum * velocity[i] - config.learning_rate * g
                    weights[i] = weights[i] + velocity[i]
                else:
                    weights[i] = weights[i] - config.learning_rate * g
        epoch_losses.append(float(np.mean(batch_losses)))

    return TrainResult(ConvNet(arch, tuple(weights)), tuple(epoch_losses))


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


def accuracy(model, dataset: Dataset) -> float:
    """Fraction of samples whose top class matches the label."""
    if len(dataset) == 0:
        raise ValueError("cannot compute accuracy of an empty dataset")
    logits = model.forward_batch(dataset.images)
    return accuracy_from_logits(logits, dataset.labels)


def save_model(model, path) -> None:
    """Write a model as magic "SALM", u16 version, descriptor, f32-LE weights."""
    if isinstance(model, ConvNet):
        descriptor = {
            "kind": "conv",
            "input": list(model.arch.input_shape),
            "blocks": [[b.kernel, b.channels] for b in model.arch.blocks],
            "classes": model.arch.n_classes,
        }
        arrays = model.weights
    elif isinstance(model, LinearModel):
        descriptor = {
            "kind": "linear",
            "input": list(model.input_shape),
            "classes": model.n_classes,
        }
        arrays = (model.weights, model.bias)
    else:
        raise TypeError(f"cannot serialize model of type {type(model).__name__}")

    blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<H", MODEL_FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path):
    """Read a model written by ``save_model``.

    Raises:
        ModelFormatError: on bad magic, version, descriptor, or truncation.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MODEL_MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    (desc_len,) = struct.unpack_from("<I", raw, 6)
    try:
        descriptor = json.loads(raw[10 : 10 + desc_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model descriptor: {exc}") from exc

    offset = 10 + desc_len
    if descriptor.get("kind") == "conv":
        arch = Architecture(
            input_shape=tuple(descriptor["input"]),
            blocks=tuple(ConvBlock(k, c) for k, c in descriptor["blocks"]),
            n_classes=int(descriptor["classes"]),
        )
        shapes = arch.weight_shapes()
    elif descriptor.get("kind") == "linear":
        h, w, c = descriptor["input"]
        k = int(descriptor["classes"])
        shapes = [(k, h * w * c), (k,)]
    else:
        raise ModelFormatError(f"unknown model kind {descriptor.get('kind')!r}")

    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(raw):
            raise ModelFormatError("model file truncated")
        arrays.append(np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).copy())
        offset = end
    if offset != len(raw):
        raise ModelFormatError("trailing bytes after weight arrays")

    if descriptor["kind"] == "conv":
        return ConvNet(arch, tuple(arrays))
    return LinearModel(arrays[0], arrays[1], tuple(descriptor["input"]))
