"""
Reader for IDX files (MNIST layout).

Image files: big-endian magic 0x00000803, count, rows, cols, then unsigned
bytes. Label files: magic 0x00000801, count, then unsigned bytes. Files may be
gzip-compressed.
"""
import gzip
import logging
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as handle:
        return handle.read()


def parse_images(raw: bytes) -> np.ndarray:
    """Parse an image file into (count, rows * cols) float64 scaled to [0, 1]."""
    if len(raw) < 16:
        raise DimensionError("IDX image file truncated before header end")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise DimensionError(f"bad IDX image magic 0x{magic:08x}")
    expected = count * rows * cols
    pixels = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=16) if len(raw) >= 16 + expected else None
    if pixels is None:
        raise DimensionError(f"IDX image file holds fewer than {count} images of {rows}x{cols}")
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def parse_labels(raw: bytes) -> np.ndarray:
    if len(raw) < 8:
        raise DimensionError("IDX label file truncated before header end")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise DimensionError(f"bad IDX label magic 0x{magic:08x}")
    if len(raw) < 8 + count:
        raise DimensionError(f"IDX label file holds fewer than {count} labels")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx_dataset(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """
    Load an IDX image/label pair.

    Returns:
        (features, labels) with features flattened to rows * cols columns.
    """
    features = parse_images(_read_bytes(images_path))
    labels = parse_labels(_read_bytes(labels_path))
    if features.shape[0] != labels.shape[0]:
        raise DimensionError(
            f"{features.shape[0]} images but {labels.shape[0]} labels"
        )
    logger.info(f"Loaded {features.shape[0]} IDX samples with {features.shape[1]} features")
    return features, labels


def encode_idx(images: np.ndarray, labels: np.ndarray) -> tuple[bytes, bytes]:
    """Serialize uint8 images (count, rows, cols) and labels into IDX byte strings."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    image_bytes = struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols) + images.tobytes()
    label_bytes = struct.pack(">II", LABEL_MAGIC, labels.shape[0]) + labels.tobytes()
    return image_bytes, label_bytes
