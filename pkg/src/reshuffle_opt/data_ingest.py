"""IDX image/label parsing and synthetic classification datasets.

The IDX readers treat input as untrusted: magic numbers, dimension counts,
and byte lengths are validated before any allocation, and declared sizes are
computed in Python ints so a hostile header cannot trigger an overflow or an
oversized allocation attempt.
"""

import gzip
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .samplers import RngStream

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_GZIP_PREFIX = b"\x1f\x8b"


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class IdxFormatError(IdxError):
    """Magic number or dimension structure is wrong."""


class IdxLengthError(IdxError):
    """Declared sizes disagree with the actual byte count."""


class IdxValueError(IdxError):
    """A payload value is outside its documented range."""


def _inflate(data):
    if data[:2] == _GZIP_PREFIX:
        try:
            return gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise IdxLengthError(f"corrupt gzip stream: {exc}") from exc
    return data


def _read_header(data, expected_magic, n_dims, kind):
    header_len = 4 * (1 + n_dims)
    if len(data) < header_len:
        raise IdxLengthError(
            f"{kind} header needs {header_len} bytes, got {len(data)}"
        )
    words = np.frombuffer(data[:header_len], dtype=">u4")
    magic = int(words[0])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{kind} magic mismatch: expected {expected_magic:#010x}, got {magic:#010x}"
        )
    return [int(w) for w in words[1:]], header_len


def parse_idx_images(data):
    """Decode an IDX image file (optionally gzipped) to float64 rows in [0,1].

    Returns (pixels, rows, cols) where pixels has one flattened image per
    row. Rejects wrong magic, short or oversized payloads, and undeclared
    trailing bytes.
    """
    data = _inflate(bytes(data))
    (count, rows, cols), offset = _read_header(data, IMAGES_MAGIC, 3, "image")
    expected = offset + count * rows * cols
    if len(data) != expected:
        raise IdxLengthError(
            f"image payload: expected {expected} bytes, got {len(data)}"
        )
    raw = np.frombuffer(data, dtype=np.uint8, offset=offset)
    pixels = raw.astype(np.float64) / 255.0
    return pixels.reshape(count, rows * cols), rows, cols


def parse_idx_labels(data):
    """Decode an IDX label file (optionally gzipped) to an int64 vector.

    Labels must be digits 0..9.
    """
    data = _inflate(bytes(data))
    (count,), offset = _read_header(data, LABELS_MAGIC, 1, "label")
    expected = offset + count
    if len(data) != expected:
        raise IdxLengthError(
            f"label payload: expected {expected} bytes, got {len(data)}"
        )
    labels = np.frombuffer(data, dtype=np.uint8, offset=offset).astype(np.int64)
    if count and labels.max() > 9:
        raise IdxValueError(f"label value {int(labels.max())} exceeds 9")
    return labels


def serialize_idx_images(pixels, rows, cols):
    """Inverse of parse_idx_images for float rows in [0,1]."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[1] != rows * cols:
        raise ConfigurationError("pixel rows must have length rows*cols")
    header = np.array([IMAGES_MAGIC, pixels.shape[0], rows, cols], dtype=">u4")
    body = np.rint(pixels * 255.0).astype(np.uint8)
    return header.tobytes() + body.tobytes()


def serialize_idx_labels(labels):
    """Inverse of parse_idx_labels for digit labels."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ConfigurationError("labels must be one-dimensional")
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise ConfigurationError("labels must be digits 0..9")
    header = np.array([LABELS_MAGIC, labels.shape[0]], dtype=">u4")
    return header.tobytes() + labels.astype(np.uint8).tobytes()


@dataclass(frozen=True)
class DatasetHandle:
    """In-memory classification dataset with features scaled to [0,1]."""

    samples: int
    feature_dim: int
    features: np.ndarray
    labels: np.ndarray
    classes: int


def make_gaussian_blobs(classes, per_class, dim, separation, seed=0):
    """Gaussian class blobs with unit noise and axis-aligned means.

    Class c is centered at separation * (1 + c // dim) along axis c % dim.
    Rows are shuffled with the seeded stream and features are min-max
    rescaled per column to [0,1].
    """
    if classes < 2:
        raise ConfigurationError("need at least two classes")
    if per_class < 1 or dim < 1:
        raise ConfigurationError("per_class and dim must be positive")
    if separation <= 0:
        raise ConfigurationError("separation must be positive")
    gen = RngStream(seed).generator
    total = classes * per_class
    feats = gen.standard_normal((total, dim))
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    for c in range(classes):
        feats[labels == c, c % dim] += separation * (1 + c // dim)
    order = gen.permutation(total)
    feats = feats[order]
    labels = labels[order]
    lo = feats.min(axis=0)
    span = feats.max(axis=0) - lo
    span[span == 0] = 1.0
    feats = (feats - lo) / span
    return DatasetHandle(
        samples=total,
        feature_dim=dim,
        features=feats,
        labels=labels,
        classes=classes,
    )


def load_idx_dataset(images_path, labels_path, limit=None, classes=None):
    """Load paired IDX image and label files into a DatasetHandle."""
    with open(images_path, "rb") as fh:
        pixels, _, _ = parse_idx_images(fh.read())
    with open(labels_path, "rb") as fh:
        labels = parse_idx_labels(fh.read())
    if pixels.shape[0] != labels.shape[0]:
        raise ConfigurationError(
            f"image count {pixels.shape[0]} does not match label count {labels.shape[0]}"
        )
    if limit is not None:
        if limit < 1:
            raise ConfigurationError("limit must be positive")
        pixels = pixels[:limit]
        labels = labels[:limit]
    n_classes = int(classes) if classes is not None else int(labels.max()) + 1
    if labels.size and labels.max() >= n_classes:
        raise ConfigurationError("a label exceeds the declared class count")
    return DatasetHandle(
        samples=pixels.shape[0],
        feature_dim=pixels.shape[1],
        features=pixels,
        labels=labels,
        classes=n_classes,
    )
