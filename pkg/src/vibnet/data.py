"""Dataset ingestion: IDX (MNIST) parsing and synthetic Gaussian blobs."""

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError
from .tensor import RandomSource

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MAX_IDX_ELEMENTS = 1 << 31

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = 10
    normalization: dict = field(default_factory=lambda: {"mean": 0.0, "scale": 1.0})

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise InputError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.split, self.num_classes,
                       dict(self.normalization))

    def flattened(self):
        return Dataset(self.images.reshape(len(self), -1), self.labels, self.split,
                       self.num_classes, dict(self.normalization))

    def as_images(self, shape=(1, 28, 28)):
        return Dataset(self.images.reshape((len(self),) + tuple(shape)), self.labels, self.split,
                       self.num_classes, dict(self.normalization))

    def normalized(self, mean, scale):
        """Return ``(images - mean) / scale``; the record composes with earlier ones."""
        prev = self.normalization
        record = {"mean": prev["mean"] + mean * prev["scale"], "scale": prev["scale"] * scale}
        return Dataset((self.images - mean) / scale, self.labels, self.split, self.num_classes,
                       record)

    def denormalized(self):
        n = self.normalization
        return Dataset(self.images * n["scale"] + n["mean"], self.labels, self.split,
                       self.num_classes, {"mean": 0.0, "scale": 1.0})

    def batches(self, batch_size, rng=None):
        """Yield ``(x, y)`` minibatches; shuffled when ``rng`` is given."""
        n = len(self)
        order = rng.permutation(n) if rng is not None else np.arange(n)
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            yield self.images[idx], self.labels[idx]


def parse_idx(data):
    """Decode an IDX image (``0x803``) or label (``0x801``) file.

    Images come back as ``float64`` in ``[0, 1]`` with shape
    ``(count, rows, cols)``; labels as ``int64`` with shape ``(count,)``.
    """
    data = bytes(data)
    if len(data) < 4:
        raise ParseError("truncated header", len(data))
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise ParseError(f"bad magic 0x{magic:08x}", 0)
    header = 4 + 4 * ndim
    if len(data) < header:
        raise ParseError("truncated dimension header", len(data))
    dims = struct.unpack(">" + "I" * ndim, data[4:header])
    count = 1
    for d in dims:
        count *= d
        if count > MAX_IDX_ELEMENTS:
            raise ParseError(f"dimensions {dims} overflow the element limit", 4)
    if len(data) - header < count:
        raise ParseError(f"payload has {len(data) - header} bytes, expected {count}", len(data))
    if len(data) - header > count:
        raise ParseError("trailing bytes after payload", header + count)
    payload = np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)
    if ndim == 1:
        return payload.astype(np.int64)
    return payload.astype(np.float64) / 255.0


def to_idx(array):
    """Encode images in ``[0, 1]`` (3-D) or integer labels (1-D) as IDX bytes."""
    array = np.asarray(array)
    if array.ndim == 3:
        raw = np.rint(array * 255.0)
        magic = IDX_IMAGES_MAGIC
    elif array.ndim == 1:
        raw = array
        magic = IDX_LABELS_MAGIC
    else:
        raise InputError(f"IDX export supports 1-D labels or 3-D images, got {array.shape}")
    if raw.min(initial=0) < 0 or raw.max(initial=0) > 255:
        raise InputError("values do not fit in unsigned bytes")
    header = struct.pack(">I", magic) + struct.pack(">" + "I" * array.ndim, *array.shape)
    return header + raw.astype(np.uint8).tobytes()


def data_dir(path=None):
    path = path or os.environ.get("DATA_DIR")
    if not path:
        raise InputError("no dataset directory: pass a path or set DATA_DIR")
    return Path(path)


def load_mnist(split="train", path=None, flatten=True):
    """Load an MNIST split from ``path`` (or ``$DATA_DIR``), pixels in [0, 1]."""
    if split not in MNIST_FILES:
        raise InputError(f"unknown split {split!r}")
    root = data_dir(path)
    img_name, lbl_name = MNIST_FILES[split]
    for sub in (root, root / "mnist"):
        if (sub / img_name).exists():
            root = sub
            break
    images = parse_idx((root / img_name).read_bytes())
    labels = parse_idx((root / lbl_name).read_bytes())
    ds = Dataset(images, labels, split, 10)
    return ds.flattened() if flatten else ds.as_images()


def synthetic_blobs(n, classes, dim, separation, seed=0, split="train"):
    """Isotropic unit-variance Gaussian clusters.

    Class means are placed at ``separation / sqrt(2)`` along distinct
    coordinate axes (``dim >= classes``) so every pair of means is exactly
    ``separation`` apart.
    """
    if n < classes:
        raise InputError(f"need n >= classes, got n={n}, classes={classes}")
    if dim < classes:
        raise InputError(f"need dim >= classes for equidistant means, got dim={dim}")
    rng = RandomSource(seed)
    labels = np.arange(n) % classes
    labels = labels[rng.permutation(n)]
    means = np.zeros((classes, dim))
    means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    images = means[labels] + rng.standard_normal((n, dim))
    return Dataset(images, labels.astype(np.int64), split, classes)
