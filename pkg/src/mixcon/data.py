"""Dataset generation, IDX ingestion, label noise, and batching.

IDX files are big-endian: images carry magic 0x00000803 with dims
(count, rows, cols), labels carry 0x00000801 with dims (count,). A
three-channel extension uses magic 0x00000804 with dims
(count, channels, rows, cols); it is specific to this repository and
documented in the README. Pixels are stored as unsigned bytes and
scaled to [0, 1] on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
IMAGE3_MAGIC = 0x00000804


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, d) flat or (N, C, H, W) images in [0, 1]
    labels: np.ndarray  # (N,) integer class ids
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ContractError(
                f"{self.inputs.shape[0]} inputs vs {self.labels.shape[0]} labels"
            )
        if self.inputs.shape[0] < 1:
            raise ContractError("dataset must hold at least one sample")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ContractError(
                f"labels outside [0, {self.num_classes}) present"
            )

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class BatchPlan:
    seed: int
    batch_size: int
    shuffle: bool = True


def gen_synthetic(seed: int, n_train: int = 800, n_test: int = 200):
    """Two-Gaussian binary classification data in 10 dimensions.

    Class 1 is drawn from Normal(0, I), class 0 from Normal(-1, I),
    with balanced classes in both splits.
    """
    if n_train % 2 or n_test % 2:
        raise ConfigError(
            f"split sizes must be even for balanced classes, got "
            f"{n_train}/{n_test}"
        )
    d = 10
    rng = np.random.default_rng(seed)

    def split(n):
        pos = rng.standard_normal((n // 2, d))
        neg = rng.standard_normal((n // 2, d)) - 1.0
        x = np.concatenate([pos, neg])
        y = np.concatenate([np.ones(n // 2, dtype=np.int64),
                            np.zeros(n // 2, dtype=np.int64)])
        return Dataset(inputs=x, labels=y, num_classes=2)

    return split(n_train), split(n_test)


def _read_u32s(data, off, count, path):
    end = off + 4 * count
    if end > len(data):
        raise FormatError(f"{path}: truncated header at byte offset {off}")
    return struct.unpack_from(f">{count}I", data, off), end


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair into a Dataset with pixels in [0, 1]."""
    with open(images_path, "rb") as f:
        data = f.read()
    (magic,), off = _read_u32s(data, 0, 1, images_path)
    if magic == IMAGE_MAGIC:
        (n, h, w), off = _read_u32s(data, off, 3, images_path)
        c = 1
    elif magic == IMAGE3_MAGIC:
        (n, c, h, w), off = _read_u32s(data, off, 4, images_path)
    else:
        raise FormatError(
            f"{images_path}: bad image magic 0x{magic:08x} at byte offset 0"
        )
    need = n * c * h * w
    if len(data) - off != need:
        raise FormatError(
            f"{images_path}: expected {need} pixel bytes, file ends at byte "
            f"offset {len(data)} (payload starts at {off})"
        )
    pixels = np.frombuffer(data, dtype=np.uint8, offset=off)
    images = pixels.reshape(n, c, h, w).astype(np.float64) / 255.0

    with open(labels_path, "rb") as f:
        ldata = f.read()
    (lmagic,), loff = _read_u32s(ldata, 0, 1, labels_path)
    if lmagic != LABEL_MAGIC:
        raise FormatError(
            f"{labels_path}: bad label magic 0x{lmagic:08x} at byte offset 0"
        )
    (ln,), loff = _read_u32s(ldata, loff, 1, labels_path)
    if ln != n:
        raise FormatError(
            f"{labels_path}: {ln} labels for {n} images (count at byte offset 4)"
        )
    if len(ldata) - loff != ln:
        raise FormatError(
            f"{labels_path}: expected {ln} label bytes, file ends at byte "
            f"offset {len(ldata)}"
        )
    labels = np.frombuffer(ldata, dtype=np.uint8, offset=loff).astype(np.int64)
    num_classes = int(labels.max()) + 1 if ln else 1
    return Dataset(inputs=images, labels=labels, num_classes=num_classes)


def save_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write a Dataset as an IDX pair; pixels are rounded to bytes."""
    x = ds.inputs
    if x.ndim != 4:
        raise ContractError(f"IDX export needs (N, C, H, W) images, got {x.shape}")
    n, c, h, w = x.shape
    pixels = np.clip(np.round(x * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        if c == 1:
            f.write(struct.pack(">IIII", IMAGE_MAGIC, n, h, w))
        else:
            f.write(struct.pack(">IIIII", IMAGE3_MAGIC, n, c, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())


def flip_labels(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Reassign round(fraction * N) labels to uniformly chosen other classes."""
    if not (0.0 <= fraction <= 1.0):
        raise ContractError(f"fraction must lie in [0, 1], got {fraction}")
    n = len(ds)
    k = int(round(fraction * n))
    labels = ds.labels.copy()
    if k:
        if ds.num_classes < 2:
            raise ContractError("cannot flip labels with fewer than 2 classes")
        rng = np.random.default_rng(seed)
        idx = rng.choice(n, size=k, replace=False)
        offsets = rng.integers(1, ds.num_classes, size=k)
        labels[idx] = (labels[idx] + offsets) % ds.num_classes
    return Dataset(inputs=ds.inputs, labels=labels, num_classes=ds.num_classes)


def batches(ds: Dataset, plan: BatchPlan):
    """Deterministic partition into (inputs, labels) batches.

    The final short batch is kept. Order is the dataset order unless
    ``plan.shuffle`` is set, in which case a seeded permutation is used.
    """
    if plan.batch_size <= 0:
        raise ConfigError(f"batch_size must be positive, got {plan.batch_size}")
    n = len(ds)
    if plan.batch_size > n:
        raise ConfigError(f"batch_size {plan.batch_size} exceeds dataset size {n}")
    if plan.shuffle:
        order = np.random.default_rng(plan.seed).permutation(n)
    else:
        order = np.arange(n)
    out = []
    for start in range(0, n, plan.batch_size):
        sel = order[start : start + plan.batch_size]
        out.append((ds.inputs[sel], ds.labels[sel]))
    return out
