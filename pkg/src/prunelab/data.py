"""Datasets: synthetic Gaussian mixtures, IDX (MNIST-format) files, and the
3073-byte CIFAR binary layout."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803  # unsigned byte, 3 dimensions
IDX_LABEL_MAGIC = 0x00000801  # unsigned byte, 1 dimension
CIFAR_RECORD_BYTES = 3073


class DataFormatError(ValueError):
    """Raised for malformed dataset files; messages carry byte offsets."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (m, ...) float64
    labels: np.ndarray  # (m,) int64
    kappa: int

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.kappa):
            raise ValueError("labels must lie in [0, kappa)")

    @property
    def m(self):
        return len(self.labels)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic-gaussian-mixture"
    kappa: int = 4
    dim: int = 20
    m_train: int = 256
    m_test: int = 4096
    noise: float = 1.0
    separation: float = 1.0
    label_noise: float = 0.0
    seed: int = 0
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.label_noise <= 0.5:
            raise ValueError("label-noise fraction must lie in [0, 0.5]")
        if self.kind == "synthetic-gaussian-mixture" and (
            self.m_train < self.kappa or self.m_test < self.kappa
        ):
            raise ValueError("need at least kappa samples per split")

    def to_dict(self):
        return {
            "kind": self.kind,
            "kappa": self.kappa,
            "dim": self.dim,
            "m_train": self.m_train,
            "m_test": self.m_test,
            "noise": self.noise,
            "separation": self.separation,
            "label_noise": self.label_noise,
            "seed": self.seed,
            "paths": dict(self.paths),
        }

    @staticmethod
    def from_dict(d):
        return DatasetSpec(**d)


def _flip_labels(labels, fraction, kappa, rng):
    """Symmetric label noise: flip the chosen samples to a uniform wrong class."""
    m = labels.size
    n_flip = int(round(fraction * m))
    if n_flip == 0:
        return labels
    idx = rng.choice(m, size=n_flip, replace=False)
    shift = rng.integers(1, kappa, size=n_flip)
    out = labels.copy()
    out[idx] = (out[idx] + shift) % kappa
    return out


def gen_synthetic(spec):
    """Gaussian-mixture classification data; returns (train, test).

    Cluster means are drawn once from the spec seed; train labels optionally
    carry symmetric noise, test labels stay clean. Deterministic per seed.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 0xD5])))
    means = spec.separation * rng.standard_normal((spec.kappa, spec.dim))

    def draw(m):
        labels = rng.integers(0, spec.kappa, size=m)
        x = means[labels] + spec.noise * rng.standard_normal((m, spec.dim))
        return x, labels.astype(np.int64)

    x_tr, y_tr = draw(spec.m_train)
    x_te, y_te = draw(spec.m_test)
    if spec.label_noise > 0.0:
        y_tr = _flip_labels(y_tr, spec.label_noise, spec.kappa, rng)
    return (
        Dataset(x_tr, y_tr, spec.kappa),
        Dataset(x_te, y_te, spec.kappa),
    )


# ---------------------------------------------------------------------------
# IDX (big-endian MNIST container)


def _read_be32(buf, offset, path):
    if offset + 4 > len(buf):
        raise DataFormatError(f"{path}: truncated header at offset {offset}")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path):
    """Parse an IDX image/label file pair into a Dataset of flat pixel rows.

    Pixels are scaled to [0, 1]; images come out as (n, rows*cols) float64.
    """
    img_buf = open(images_path, "rb").read()
    magic = _read_be32(img_buf, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(
            f"{images_path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    n = _read_be32(img_buf, 4, images_path)
    rows = _read_be32(img_buf, 8, images_path)
    cols = _read_be32(img_buf, 12, images_path)
    expected = 16 + n * rows * cols
    if len(img_buf) != expected:
        raise DataFormatError(
            f"{images_path}: payload length {len(img_buf) - 16} at offset 16, expected {n * rows * cols}"
        )
    pixels = np.frombuffer(img_buf, dtype=np.uint8, offset=16).reshape(n, rows * cols)

    lab_buf = open(labels_path, "rb").read()
    magic = _read_be32(lab_buf, 0, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise DataFormatError(
            f"{labels_path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_LABEL_MAGIC:08x}"
        )
    n_lab = _read_be32(lab_buf, 4, labels_path)
    if len(lab_buf) != 8 + n_lab:
        raise DataFormatError(
            f"{labels_path}: payload length {len(lab_buf) - 8} at offset 8, expected {n_lab}"
        )
    if n_lab != n:
        raise DataFormatError(
            f"{labels_path}: label count {n_lab} does not match image count {n}"
        )
    labels = np.frombuffer(lab_buf, dtype=np.uint8, offset=8).astype(np.int64)
    kappa = int(labels.max()) + 1 if n else 1
    return Dataset(pixels.astype(np.float64) / 255.0, labels, kappa)


def write_idx(images_path, labels_path, pixels, labels):
    """Serialize uint8 images (n, rows, cols) and labels to IDX files."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(labels.tobytes())


# ---------------------------------------------------------------------------
# CIFAR binary (label byte + 3072 channel-major pixel bytes per record)


def load_cifar_binary(path, kappa=10):
    buf = open(path, "rb").read()
    if len(buf) % CIFAR_RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path}: size {len(buf)} is not a multiple of {CIFAR_RECORD_BYTES}"
        )
    n = len(buf) // CIFAR_RECORD_BYTES
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(n, CIFAR_RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    images = raw[:, 1:].reshape(n, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images, labels, kappa)


def load_dataset(spec):
    """Dispatch a DatasetSpec to its loader; returns (train, test)."""
    if spec.kind == "synthetic-gaussian-mixture":
        return gen_synthetic(spec)
    if spec.kind == "idx-images":
        train = load_idx(spec.paths["train_images"], spec.paths["train_labels"])
        test = load_idx(spec.paths["test_images"], spec.paths["test_labels"])
        return train, test
    if spec.kind == "cifar-binary":
        train = load_cifar_binary(spec.paths["train"], kappa=spec.kappa)
        test = load_cifar_binary(spec.paths["test"], kappa=spec.kappa)
        return train, test
    raise DataFormatError(f"unknown dataset kind {spec.kind!r}")
