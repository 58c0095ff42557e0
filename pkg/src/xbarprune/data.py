"""Dataset ingestion: MNIST IDX files, CIFAR-10 binary batches, and seeded
synthetic sets for fast tests and offline runs.

IDX layout: big-endian magic (0x00, 0x00, dtype, ndim), then ndim u32 dims,
then raw payload. CIFAR-10 binary batches are fixed 3073-byte records
(1 label byte + 3072 pixel bytes, channel-major R/G/B).
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .nn_core import Dataset

DATA_ENV_VAR = "XBARPRUNE_DATA"

_IDX_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: np.int16,
               0x0C: np.int32, 0x0D: np.float32, 0x0E: np.float64}


def read_idx(path) -> np.ndarray:
    """Read one IDX file, validating the header against the payload length."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated header at byte {len(raw)}")
    zero1, zero2, dtype_code, ndim = struct.unpack(">BBBB", raw[:4])
    if zero1 != 0 or zero2 != 0 or dtype_code not in _IDX_DTYPES:
        raise ValueError(f"{path}: bad magic at byte 0: {raw[:4].hex()}")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    dtype = np.dtype(_IDX_DTYPES[dtype_code]).newbyteorder(">")
    offset = 4 + 4 * ndim
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - offset != expected:
        raise ValueError(
            f"{path}: payload length {len(raw) - offset} != {expected} at byte {offset}"
        )
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims)


def write_idx(path, arr: np.ndarray) -> None:
    """Write an array as an IDX file (inverse of read_idx)."""
    codes = {np.dtype(v).str[1:]: k for k, v in _IDX_DTYPES.items()}
    code = codes[arr.dtype.str[1:]]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, code, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.astype(arr.dtype.newbyteorder(">")).tobytes())


def load_mnist(root, train: bool = True) -> Dataset:
    """MNIST from IDX files under root; pixels scaled to [0, 1]."""
    stem = "train" if train else "t10k"
    images = read_idx(Path(root) / f"{stem}-images-idx3-ubyte")
    labels = read_idx(Path(root) / f"{stem}-labels-idx1-ubyte")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(x, labels.astype(np.int64))


CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 pixels


def load_cifar10_batch(path) -> Dataset:
    """One CIFAR-10 binary batch file; pixels scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD != 0:
        raise ValueError(
            f"{path}: size {len(raw)} not a multiple of {CIFAR_RECORD} "
            f"(offset {len(raw) % CIFAR_RECORD} bytes over)"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    y = rec[:, 0].astype(np.int64)
    x = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(x, y)


def load_cifar10(root, train: bool = True) -> Dataset:
    root = Path(root)
    files = [root / f"data_batch_{i}.bin" for i in range(1, 6)] if train \
        else [root / "test_batch.bin"]
    parts = [load_cifar10_batch(f) for f in files]
    return Dataset(np.concatenate([p.x for p in parts]),
                   np.concatenate([p.y for p in parts]))


def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Seeded shuffle, first n samples; identical indices for a given seed."""
    idx = np.random.default_rng(seed).permutation(len(ds))[:n]
    return Dataset(ds.x[idx].copy(), ds.y[idx].copy())


def synthetic_blobs(
    n: int,
    classes: int = 4,
    shape=(1, 8, 8),
    noise: float = 0.25,
    seed: int = 0,
    center_seed: int | None = None,
) -> Dataset:
    """Gaussian class blobs in image space; separable at low noise.

    center_seed fixes the class centers independently of the sample seed so
    train/test splits share the same distribution."""
    crng = np.random.default_rng(seed if center_seed is None else center_seed)
    centers = crng.normal(0.0, 1.0, size=(classes, *shape)).astype(np.float32)
    rng = np.random.default_rng(seed)
    y = rng.integers(0, classes, size=n)
    x = centers[y] + rng.normal(0.0, noise, size=(n, *shape)).astype(np.float32)
    return Dataset(x.astype(np.float32), y.astype(np.int64))


def synthesize_mnist_like(root, n_train: int = 6000, n_test: int = 1000, seed: int = 7):
    """Write a deterministic 10-class 28x28 digit-surrogate dataset in MNIST
    IDX format under root (used where the real files are unavailable)."""
    rng = np.random.default_rng(seed)
    # per-class template: smooth bumps at class-specific canvas positions so
    # the classes stay well separated and quick to learn
    yy, xx = np.mgrid[0:28, 0:28]
    anchors = [(8, 8), (8, 14), (8, 20), (14, 8), (14, 14),
               (14, 20), (20, 8), (20, 14), (20, 20), (11, 11)]
    templates = np.zeros((10, 28, 28), dtype=np.float32)
    for c in range(10):
        ay, ax = anchors[c]
        for b in range(3):
            cy = ay + rng.uniform(-2.0, 2.0)
            cx = ax + rng.uniform(-2.0, 2.0)
            sig = rng.uniform(1.5, 3.0)
            amp = rng.uniform(0.7, 1.0)
            templates[c] += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig**2))
        templates[c] /= templates[c].max()

    def make(count, stem):
        y = rng.integers(0, 10, size=count)
        imgs = np.empty((count, 28, 28), dtype=np.float32)
        for i in range(count):
            imgs[i] = templates[y[i]] + rng.normal(0, 0.03, size=(28, 28))
        u8 = np.clip(imgs * 255.0, 0, 255).astype(np.uint8)
        write_idx(Path(root) / f"{stem}-images-idx3-ubyte", u8)
        write_idx(Path(root) / f"{stem}-labels-idx1-ubyte", y.astype(np.uint8))

    os.makedirs(root, exist_ok=True)
    make(n_train, "train")
    make(n_test, "t10k")


def load_dataset(
    name: str,
    path=None,
    train_subset: int | None = None,
    test_subset: int | None = None,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """(train, test) pair for name in {mnist, cifar10, synthetic-blobs}.

    path falls back to the XBARPRUNE_DATA environment variable. For the file
    formats, subsets are drawn by seeded shuffle."""
    if name == "synthetic-blobs":
        tr = synthetic_blobs(train_subset or 512, seed=seed, center_seed=seed)
        te = synthetic_blobs(test_subset or 128, seed=seed + 1, center_seed=seed)
        return tr, te
    root = Path(path or os.environ.get(DATA_ENV_VAR, ".")) / name
    if name == "mnist":
        tr, te = load_mnist(root, True), load_mnist(root, False)
    elif name == "cifar10":
        tr, te = load_cifar10(root, True), load_cifar10(root, False)
    else:
        raise ValueError(f"unknown dataset {name!r}")
    if train_subset:
        tr = subset(tr, train_subset, seed)
    if test_subset:
        te = subset(te, test_subset, seed + 1)
    return tr, te
