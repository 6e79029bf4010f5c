"""
src/services/idx_service.py
Reading and writing IDX files (the MNIST / Fashion-MNIST container format).

Layout: 2 zero bytes, a type byte (0x08 = unsigned byte), a dimension count
byte, one big-endian uint32 extent per dimension, then the raw payload.
Gzip-compressed files are detected by their magic bytes and read transparently.
"""

from __future__ import annotations

import gzip
import os
import struct
from typing import Tuple

import numpy as np

from src.types.dataset import LabeledImageSet
from src.types.errors import IdxCountMismatchError, IdxMagicError, IdxTruncatedError

# ---- Magic numbers ----------------------------------------------------------
IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"
UBYTE_TYPE = 0x08


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise IdxTruncatedError(path, f"gzip stream is damaged: {e}") from e
    return raw


def read_idx_array(path: str, expected_magic: int) -> np.ndarray:
    """Decode one IDX file into a uint8 array with the extents from its header."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxTruncatedError(path, f"file has {len(raw)} bytes, header needs 4")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(
            path, f"bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = raw[3]
    header_size = 4 + 4 * ndim
    if len(raw) < header_size:
        raise IdxTruncatedError(path, f"header needs {header_size} bytes, file has {len(raw)}")
    extents: Tuple[int, ...] = struct.unpack(f">{ndim}I", raw[4:header_size])
    expected = int(np.prod(extents)) if extents else 0
    payload = raw[header_size:]
    if len(payload) < expected:
        raise IdxTruncatedError(
            path, f"payload has {len(payload)} bytes, extents {extents} need {expected}"
        )
    return np.frombuffer(payload[:expected], dtype=np.uint8).reshape(extents)


def load_idx(images_path: str, labels_path: str, name: str = "") -> LabeledImageSet:
    """Load an image/label IDX pair, scaling pixels by 1/255 into [0, 1]."""
    images = read_idx_array(images_path, IMAGES_MAGIC)
    labels = read_idx_array(labels_path, LABELS_MAGIC)
    if images.ndim != 3:
        raise IdxMagicError(images_path, f"image file must have 3 dimensions, has {images.ndim}")
    if labels.ndim != 1:
        raise IdxMagicError(labels_path, f"label file must have 1 dimension, has {labels.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            labels_path,
            f"{labels.shape[0]} labels for {images.shape[0]} images in {images_path}",
        )
    pixels = images.astype(np.float32)[:, None, :, :] / np.float32(255.0)
    return LabeledImageSet(
        images=pixels,
        labels=labels.astype(np.int64),
        name=name or os.path.basename(images_path),
    )


def _encode(magic: int, array: np.ndarray) -> bytes:
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=np.uint8).tobytes()


def write_idx(dataset: LabeledImageSet, images_path: str, labels_path: str) -> None:
    """Inverse of :func:`load_idx`; gzip is used when a path ends in ``.gz``."""
    pixels = np.rint(dataset.images[:, 0] * 255.0).astype(np.uint8)
    for path, blob in (
        (images_path, _encode(IMAGES_MAGIC, pixels)),
        (labels_path, _encode(LABELS_MAGIC, dataset.labels.astype(np.uint8))),
    ):
        if path.endswith(".gz"):
            blob = gzip.compress(blob, mtime=0)
        with open(path, "wb") as f:
            f.write(blob)
