"""Datasets: a procedural oriented-bar task and an IDX file reader."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rngs

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Images are (N, H, W, C) float arrays, labels int64."""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    classes: int

    def __post_init__(self):
        for x, y, split in ((self.train_x, self.train_y, "train"), (self.val_x, self.val_y, "val")):
            if len(x) != len(y):
                raise DataError(f"{split}: {len(x)} images but {len(y)} labels")
            if len(y) and (y.min() < 0 or y.max() >= self.classes):
                raise DataError(f"{split}: labels outside [0, {self.classes})")

    @property
    def resolution(self) -> int:
        return self.train_x.shape[1]

    @property
    def channels(self) -> int:
        return self.train_x.shape[3]

    def val_subset(self, size: int | None, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Prefix of a seeded shuffle of the validation split (None = all of it)."""
        n = len(self.val_y)
        if size is None or size >= n:
            return self.val_x, self.val_y
        if size < 1:
            raise DataError("validation subset must be non-empty")
        order = rngs.stream(seed, "val_subset").permutation(n)[:size]
        return self.val_x[order], self.val_y[order]

    def astype(self, dtype) -> Dataset:
        return Dataset(self.train_x.astype(dtype), self.train_y, self.val_x.astype(dtype), self.val_y, self.classes)


def bar_template(angle: float, resolution: int, offset: float = 0.0, width: float | None = None) -> np.ndarray:
    """A soft line through the centre (shifted by ``offset`` pixels) at ``angle`` radians."""
    width = width if width is not None else max(resolution / 10.0, 0.75)
    c = (resolution - 1) / 2.0
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64) - c
    # signed distance from the line with direction (cos a, sin a)
    d = -xx * np.sin(angle) + yy * np.cos(angle) - offset
    return np.exp(-0.5 * (d / width) ** 2)


def _make_split(n, classes, resolution, noise, jitter, rng):
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    offsets = rng.uniform(-0.5, 0.5, size=n) * jitter * resolution
    images = np.empty((n, resolution, resolution, 1), dtype=np.float32)
    for i, (c, off) in enumerate(zip(labels, offsets)):
        images[i, :, :, 0] = bar_template(c * np.pi / classes, resolution, off)
    if noise:
        images += rng.normal(0.0, noise, size=images.shape).astype(np.float32)
    return images, labels.astype(np.int64)


def gen_synthetic(classes: int = 4, resolution: int = 16, n_train: int = 2048, n_val: int = 512,
                  noise: float = 0.5, seed: int = 0, jitter: float = 0.0) -> Dataset:
    """Oriented bars, class c at angle c*pi/classes, plus Gaussian pixel noise.

    ``jitter`` shifts each bar perpendicular to itself by up to
    ``jitter * resolution / 2`` pixels, which makes the task position-invariant.
    """
    if classes < 2:
        raise DataError("need at least two classes")
    tx, ty = _make_split(n_train, classes, resolution, noise, jitter, rngs.stream(seed, "data/train"))
    vx, vy = _make_split(n_val, classes, resolution, noise, jitter, rngs.stream(seed, "data/val"))
    return Dataset(tx, ty, vx, vy, classes)


def _read_idx(path, expected_magic: int, expected_rank: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    header = 4 + 4 * expected_rank
    if len(raw) < header:
        raise DataError(f"{path}: truncated header")
    dims = struct.unpack(f">{expected_rank}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise DataError(f"{path}: truncated payload ({len(raw) - header} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """One split from an IDX image/label pair; pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES, 3)
    labels = _read_idx(labels_path, IDX_LABELS, 1)
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images but {len(labels)} labels")
    return (images.astype(np.float32) / 255.0)[..., None], labels.astype(np.int64)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = IDX_IMAGES if array.ndim == 3 else IDX_LABELS
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def dataset_from_config(data_cfg) -> Dataset:
    if data_cfg.synthetic is not None:
        return gen_synthetic(**data_cfg.synthetic)
    spec = data_cfg.idx
    tx, ty = load_idx(spec["train_images"], spec["train_labels"])
    vx, vy = load_idx(spec["val_images"], spec["val_labels"])
    classes = spec.get("classes") or int(max(ty.max(), vy.max())) + 1
    return Dataset(tx, ty, vx, vy, classes)
