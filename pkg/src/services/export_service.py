"""
src/services/export_service.py
Output files: atomic writes, 6-decimal CSVs (pandas) and 8-bit PGM images.
"""

from __future__ import annotations

import os
import tempfile
from typing import Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.types.errors import ContractError

CSV_FLOAT_FORMAT = "%.6f"


# ---- Atomic writes ----------------------------------------------------------
def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---- CSV --------------------------------------------------------------------
def write_csv(
    path: str, rows: Iterable[Mapping[str, object]], columns: Optional[Sequence[str]] = None
) -> pd.DataFrame:
    """Write rows with a header line and fixed 6-decimal floats; returns the frame."""
    frame = pd.DataFrame(list(rows), columns=list(columns) if columns else None)
    atomic_write_text(path, frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n"))
    return frame


def write_matrix_csv(path: str, values: np.ndarray) -> None:
    """Raw 2-d array, one CSV row per image row, no header."""
    frame = pd.DataFrame(np.asarray(values, dtype=np.float64))
    atomic_write_text(
        path,
        frame.to_csv(index=False, header=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n"),
    )


# ---- PGM --------------------------------------------------------------------
def to_gray8(values: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Min-max normalize to 0..255; a constant map becomes all zeros."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ContractError("cannot render non-finite values")
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = (values - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(values)
    return np.rint(scaled * 255.0).astype(np.uint8), lo, hi


def pixels_to_gray8(image: np.ndarray) -> np.ndarray:
    """[0, 1] pixel intensities to bytes, no normalization."""
    return np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_pgm(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ContractError(f"PGM needs a 2-d uint8 array, got {gray.dtype} {gray.shape}")
    height, width = gray.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + gray.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Inverse of :func:`encode_pgm` for the binary P5 files written here."""
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise ContractError("not a binary PGM written by this package")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=width * height).reshape(height, width)


def write_pgm(path: str, gray: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pgm(gray))


def contact_sheet(tiles: Sequence[Sequence[np.ndarray]], pad: int = 1) -> np.ndarray:
    """Grid of equally sized uint8 tiles, ``pad`` zero pixels between them."""
    if not tiles or not tiles[0]:
        raise ContractError("contact sheet needs at least one tile")
    tile_h, tile_w = tiles[0][0].shape
    rows, cols = len(tiles), max(len(row) for row in tiles)
    sheet = np.zeros(
        (rows * tile_h + (rows - 1) * pad, cols * tile_w + (cols - 1) * pad), dtype=np.uint8
    )
    for r, row in enumerate(tiles):
        for c, tile in enumerate(row):
            top, left = r * (tile_h + pad), c * (tile_w + pad)
            sheet[top : top + tile_h, left : left + tile_w] = tile
    return sheet
