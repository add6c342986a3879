"""MNIST in IDX format: parsing, normalisation, batching and fetching."""

from __future__ import annotations

import gzip
import io
import logging
import os
import struct
import tarfile
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DatasetMissingError, FormatError, LengthError, ShapeError
from .linalg import SeededRng

log = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATA_DIR_ENV = "DTC_DATA_DIR"
DEFAULT_DATA_DIR = Path.home() / ".cache" / "dtc" / "mnist"

FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

# gzip mirrors serve one file per URL; the npm tarball bundles all four
GZ_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)
NPM_TARBALL = "https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz"


def _header(buf: bytes, magic: int, ndim: int, what: str):
    if len(buf) < 4:
        raise LengthError(f"{what}: truncated header ({len(buf)} bytes)")
    (got,) = struct.unpack(">I", buf[:4])
    if got != magic:
        raise FormatError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise LengthError(f"{what}: truncated header ({len(buf)} bytes)")
    dims = struct.unpack(f">{ndim}I", buf[4:end])
    expected = int(np.prod(dims))
    payload = len(buf) - end
    if payload < expected:
        raise LengthError(f"{what}: expected {expected} payload bytes, found {payload}")
    if payload > expected:
        raise LengthError(f"{what}: {payload - expected} trailing bytes after payload")
    return dims, np.frombuffer(buf, dtype=np.uint8, offset=end)


def parse_idx_images(buf: bytes) -> np.ndarray:
    """``count x rows*cols`` uint8 array from an IDX image file."""
    dims, payload = _header(bytes(buf), IMAGE_MAGIC, 3, "idx images")
    count, rows, cols = dims
    return payload.reshape(count, rows * cols).copy()


def parse_idx_labels(buf: bytes) -> np.ndarray:
    dims, payload = _header(bytes(buf), LABEL_MAGIC, 1, "idx labels")
    if payload.size and payload.max() > 9:
        raise DataError(f"idx labels: label {int(payload.max())} outside 0-9")
    return payload.copy()


def serialize_idx_images(images, rows: int = 28, cols: int = 28) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 2 or images.shape[1] != rows * cols:
        raise ShapeError(f"serialize images: shape {images.shape} is not count x {rows * cols}")
    return struct.pack(">4I", IMAGE_MAGIC, images.shape[0], rows, cols) + images.tobytes()


def serialize_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", LABEL_MAGIC, labels.size) + labels.tobytes()


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # count x 784, float64 in [0, 1]
    labels: np.ndarray  # count, int64 in 0..9

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"dataset: {self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self):
        return self.labels.shape[0]


def normalize(raw_images, labels) -> Dataset:
    return Dataset(np.asarray(raw_images, dtype=np.float64) / 255.0, np.asarray(labels, dtype=np.int64))


class BatchIterator:
    """Shuffled mini-batches; epoch ``e`` uses the permutation from stream ``("batches", e)``.

    The trailing partial batch of each epoch is emitted as-is.
    """

    def __init__(self, dataset: Dataset, batch_size: int, rng: SeededRng):
        if batch_size < 1:
            raise ShapeError(f"batch size must be >= 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.rng = rng
        self.epoch = 0
        self._order = None
        self._pos = 0

    def _start_epoch(self):
        self._order = self.rng.child("batches", self.epoch).generator.permutation(len(self.dataset))
        self._pos = 0

    def next_batch(self):
        if self._order is None:
            self._start_epoch()
        elif self._pos >= len(self._order):
            self.epoch += 1
            self._start_epoch()
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += idx.size
        return self.dataset.images[idx], self.dataset.labels[idx]

    def batches_per_epoch(self) -> int:
        return -(-len(self.dataset) // self.batch_size)


def resolve_data_dir(data_dir=None) -> Path:
    if data_dir:
        return Path(data_dir)
    env = os.environ.get(DATA_DIR_ENV)
    return Path(env) if env else DEFAULT_DATA_DIR


def _read(directory: Path, stem: str) -> bytes:
    plain, gz = directory / stem, directory / f"{stem}.gz"
    if plain.exists():
        return plain.read_bytes()
    if gz.exists():
        return gzip.decompress(gz.read_bytes())
    raise DatasetMissingError(
        f"MNIST file {stem} not found in {directory}; run `dtc fetch-data` or set {DATA_DIR_ENV}"
    )


def load_mnist(data_dir=None):
    """``(train, test)`` datasets from ``data_dir``, ``$DTC_DATA_DIR`` or the cache dir."""
    directory = resolve_data_dir(data_dir)
    parts = {key: _read(directory, stem) for key, stem in FILES.items()}
    train = normalize(parse_idx_images(parts["train_images"]), parse_idx_labels(parts["train_labels"]))
    test = normalize(parse_idx_images(parts["test_images"]), parse_idx_labels(parts["test_labels"]))
    return train, test


def _download(url: str, timeout: float) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


def fetch_mnist(data_dir=None, timeout: float = 60.0) -> Path:
    """Download the four IDX files into ``data_dir``; existing files are kept.

    Tries the per-file gzip mirrors first, then the npm tarball.  Every file
    is parsed before it is written so a corrupt download never lands on disk.
    """
    directory = resolve_data_dir(data_dir)
    directory.mkdir(parents=True, exist_ok=True)
    missing = {k: s for k, s in FILES.items() if not (directory / s).exists()}
    if not missing:
        return directory
    blobs = {}
    for base in GZ_MIRRORS:
        try:
            for key, stem in missing.items():
                blobs[key] = gzip.decompress(_download(base + stem + ".gz", timeout))
            break
        except OSError as exc:
            log.info("mirror %s unavailable: %s", base, exc)
            blobs = {}
    if not blobs:
        log.info("falling back to %s", NPM_TARBALL)
        try:
            tarball = _download(NPM_TARBALL, timeout)
        except OSError as exc:
            raise DatasetMissingError(f"MNIST download failed from every source: {exc}") from exc
        with tarfile.open(fileobj=io.BytesIO(tarball), mode="r:gz") as tar:
            for key, stem in missing.items():
                blobs[key] = tar.extractfile(f"package/data/{stem}").read()
    for key, stem in missing.items():
        (parse_idx_images if key.endswith("images") else parse_idx_labels)(blobs[key])
        (directory / stem).write_bytes(blobs[key])
    return directory
