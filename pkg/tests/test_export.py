import numpy as np
import pandas as pd
import pytest

from src.services.export_service import (
    atomic_write_text,
    contact_sheet,
    decode_pgm,
    encode_pgm,
    pixels_to_gray8,
    to_gray8,
    write_csv,
    write_matrix_csv,
)
from src.types.errors import ContractError


def test_csv_has_header_and_six_decimals(tmp_path):
    path = tmp_path / "rows.csv"
    frame = write_csv(str(path), [{"a": 1, "b": 0.5}, {"a": 2, "b": 1 / 3}], columns=["a", "b"])
    assert path.read_text() == "a,b\n1,0.500000\n2,0.333333\n"
    assert list(frame.columns) == ["a", "b"]
    pd.testing.assert_frame_equal(pd.read_csv(path)[["a"]], frame[["a"]])


def test_matrix_csv_has_no_header(tmp_path):
    path = tmp_path / "m.csv"
    write_matrix_csv(str(path), np.array([[0.0, 1.0], [0.25, -2.0]]))
    assert path.read_text() == "0.000000,1.000000\n0.250000,-2.000000\n"


def test_gray_scaling():
    gray, lo, hi = to_gray8(np.array([[-1.0, 0.0], [1.0, 3.0]]))
    assert gray.tolist() == [[0, 64], [128, 255]]
    assert (lo, hi) == (-1.0, 3.0)
    flat, _, _ = to_gray8(np.full((2, 2), 7.0))
    assert not flat.any()
    with pytest.raises(ContractError):
        to_gray8(np.array([np.nan]))
    assert pixels_to_gray8(np.array([0.0, 0.5, 1.2])).tolist() == [0, 128, 255]


def test_pgm_header_and_decode():
    gray = np.arange(6, dtype=np.uint8).reshape(2, 3) * 40
    data = encode_pgm(gray)
    assert data.startswith(b"P5\n3 2\n255\n")
    np.testing.assert_array_equal(decode_pgm(data), gray)
    with pytest.raises(ContractError):
        encode_pgm(gray.astype(np.float32))


def test_contact_sheet_layout():
    tiles = [[np.full((2, 2), 1, np.uint8), np.full((2, 2), 2, np.uint8)], [np.full((2, 2), 3, np.uint8)]]
    sheet = contact_sheet(tiles)
    assert sheet.shape == (5, 5)
    assert sheet[0, 0] == 1 and sheet[0, 3] == 2 and sheet[3, 0] == 3
    assert not sheet[2].any() and not sheet[:, 2].any()


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = tmp_path / "out" / "note.txt"
    atomic_write_text(str(path), "one")
    atomic_write_text(str(path), "two")
    assert path.read_text() == "two"
    assert [p.name for p in path.parent.iterdir()] == ["note.txt"]
