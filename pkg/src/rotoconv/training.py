"""Task training on a frozen basis, with the standard augmentation menu.

Only layer coefficients, normalization parameters, and the classifier head are
updated; the basis is an input, never a parameter. Runs are deterministic
given (config, seed, data).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .datasets import LabeledImageSet
from .groups import RotationOperators, rotate_exact90, rotation_matrix
from .network import Model
from .optim import AMSGrad
from .tensor import Tensor


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during task training."""


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    batch_size: int = 100
    flip: bool = False
    color_normalize: bool = False
    max_translate: int = 0  # up to 4 pixels each way
    rotation_augment: str = "none"  # none | quarter | eighth | full
    rotation_interp: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.rotation_augment not in ("none", "quarter", "eighth", "full"):
            raise ValueError(f"unknown rotation_augment {self.rotation_augment!r}")
        if not 0 <= self.max_translate <= 4:
            raise ValueError("max_translate must be within [0, 4]")


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # [true, predicted]
    n: int

    @property
    def error(self) -> float:
        return 1.0 - self.accuracy


def channel_stats(images: np.ndarray) -> tuple:
    """Per-channel mean and standard deviation over the whole set."""
    mean = images.mean(axis=(0, 2, 3))
    std = images.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    return mean.astype(np.float64), std.astype(np.float64)


def normalize(images: np.ndarray, stats) -> np.ndarray:
    mean, std = stats
    shape = (1, -1, 1, 1)
    return ((images - mean.reshape(shape)) / std.reshape(shape)).astype(images.dtype)


def _translate(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift with zero fill (channels-first single image)."""
    out = np.zeros_like(image)
    h, w = image.shape[-2:]
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[..., ys, xs] = image[..., ys_src, xs_src]
    return out


def augment(images: np.ndarray, config: TrainConfig, rng: np.random.Generator,
            stats=None, ops_cache: dict | None = None) -> np.ndarray:
    """Random flips/translations/rotations, then optional normalization.

    With every flag off this is the identity. Quarter-turn rotation mode only
    ever applies exact grid permutations.
    """
    out = images
    b = images.shape[0]
    if config.flip:
        out = out.copy()
        mask = rng.random(b) < 0.5
        out[mask] = out[mask][..., ::-1]
    if config.max_translate > 0:
        t = config.max_translate
        offsets = rng.integers(-t, t + 1, size=(b, 2))
        out = np.stack([_translate(img, int(dy), int(dx))
                        for img, (dy, dx) in zip(out, offsets)])
    if config.rotation_augment != "none":
        out = _rotate_batch(out, config, rng, ops_cache)
    if config.color_normalize and stats is not None:
        out = normalize(out, stats)
    return out


def _rotate_batch(images: np.ndarray, config: TrainConfig, rng: np.random.Generator,
                  ops_cache: dict | None) -> np.ndarray:
    b = images.shape[0]
    size = images.shape[-1]
    if config.rotation_augment == "quarter":
        turns = rng.integers(0, 4, size=b)
        return np.stack([rotate_exact90(img, int(q)) for img, q in zip(images, turns)])
    if config.rotation_augment == "eighth":
        if ops_cache is None:
            ops_cache = {}
        key = (size, config.rotation_interp)
        if key not in ops_cache:
            ops_cache[key] = RotationOperators(size, 8, config.rotation_interp)
        ops = ops_cache[key]
        indices = rng.integers(0, 8, size=b)
        return np.stack([ops.apply(img, int(r)) for img, r in zip(images, indices)])
    angles = rng.uniform(0.0, 2.0 * math.pi, size=b)
    rotated = []
    for img, angle in zip(images, angles):
        m = rotation_matrix(size, float(angle), config.rotation_interp)
        flat = img.reshape(-1, size * size).T
        rotated.append((m.astype(img.dtype) @ flat).T.reshape(img.shape))
    return np.stack(rotated)


def rotate_images(images: np.ndarray, angle_deg: float,
                  method: str = "gaussian") -> np.ndarray:
    """Rotate a whole [M,C,H,W] stack by one angle (exact at quarter turns)."""
    size = images.shape[-1]
    m = rotation_matrix(size, math.radians(angle_deg), method)
    flat = images.reshape(-1, size * size).T
    return np.ascontiguousarray((m.astype(images.dtype) @ flat).T).reshape(images.shape)


def train(model: Model, train_set: LabeledImageSet, config: TrainConfig,
          val_set: LabeledImageSet | None = None, log_path=None) -> list:
    """AMSGrad task training; returns per-epoch rows of loss/accuracy."""
    rng = np.random.default_rng(config.seed)
    if config.color_normalize and model.input_stats is None:
        model.input_stats = channel_stats(train_set.images)
    stats = model.input_stats
    optimizer = AMSGrad(model.parameters(), config.learning_rate, config.weight_decay)
    images = train_set.images.astype(model.dtype)
    labels = train_set.labels
    m = len(train_set)
    batch = min(config.batch_size, m)
    ops_cache: dict = {}
    rows = []
    for epoch in range(config.epochs):
        perm = rng.permutation(m)
        loss_sum = 0.0
        correct = 0
        seen = 0
        for start in range(0, m, batch):
            take = perm[start:start + batch]
            x = augment(images[take], config, rng, stats, ops_cache)
            y = labels[take]
            logits = model.forward(Tensor(x), training=True)
            loss = T.softmax_cross_entropy(logits, y)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += value * len(take)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(take)
        row = {"epoch": epoch, "train_loss": loss_sum / seen,
               "train_acc": correct / seen}
        if val_set is not None:
            row["val_acc"] = evaluate(model, val_set).accuracy
        rows.append(row)
    if log_path is not None:
        write_training_csv(rows, log_path)
    return rows


def evaluate(model: Model, dataset: LabeledImageSet, batch_size: int = 200) -> EvalResult:
    """Frozen-statistics evaluation: accuracy plus per-class confusion counts."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty set")
    images = dataset.images.astype(model.dtype)
    if model.input_stats is not None:
        images = normalize(images, model.input_stats)
    k = dataset.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    for start in range(0, len(dataset), batch_size):
        x = images[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        logits = model.forward(Tensor(x), training=False)
        pred = logits.data.argmax(axis=1)
        np.add.at(confusion, (y, pred), 1)
    accuracy = float(np.trace(confusion)) / len(dataset)
    return EvalResult(accuracy, confusion, len(dataset))


def write_training_csv(rows, path) -> None:
    fields = ["epoch", "train_loss", "train_acc"]
    if rows and "val_acc" in rows[0]:
        fields.append("val_acc")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
