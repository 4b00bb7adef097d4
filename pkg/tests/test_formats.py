import struct

import numpy as np
import pytest

from segpaste.core import IGNORE, Raster, SemanticMask
from segpaste.formats import (
    FormatError,
    decode_binary_mask,
    decode_label_mask,
    decode_raster,
    encode_binary_mask,
    encode_label_mask,
    encode_raster,
    raster_encoding,
)


def test_raster_header_layout():
    r = Raster(np.arange(12, dtype=float).reshape(2, 2, 3))
    blob = encode_raster(r)
    assert blob[:4] == b"MSRA"
    version, dtype, bands, h, w = struct.unpack_from("<BBHII", blob, 4)
    assert (version, dtype, bands, h, w) == (1, 0, 2, 2, 3)
    assert len(blob) == 16 + 12
    # band-sequential order: band 0 rows first
    assert list(blob[16:22]) == [0, 1, 2, 3, 4, 5]


@pytest.mark.parametrize(
    "values, expected",
    [([0, 255], "u8"), ([0, 256], "u16"), ([0, 65535], "u16"), ([0, 65536], "f32"), ([-1, 2], "f32"), ([0.5, 1], "f32")],
)
def test_narrowest_lossless_encoding(values, expected):
    assert raster_encoding(np.array(values, dtype=float)) == expected


def test_preferred_encoding_widens_when_lossy():
    assert raster_encoding(np.array([1.0, 2.0]), "u16") == "u16"
    assert raster_encoding(np.array([1.5]), "u8") == "f32"


def test_float64_only_values_rejected():
    with pytest.raises(FormatError):
        encode_raster(Raster(np.full((1, 1, 1), 0.1)))


@pytest.mark.parametrize("enc", ["u8", "u16", "f32"])
def test_raster_round_trip_keeps_encoding(enc):
    vals = np.arange(24, dtype=float).reshape(2, 3, 4)
    r = Raster(vals, enc)
    blob = encode_raster(r, enc)
    back = decode_raster(blob)
    assert back == r and back.encoding == enc
    assert encode_raster(back) == blob


def test_mask_formats_round_trip():
    m = np.array([[True, False, True], [False, False, True]])
    blob = encode_binary_mask(m)
    assert blob[:4] == b"MSKB" and len(blob) == 13 + 6
    assert np.array_equal(decode_binary_mask(blob), m)

    lab = SemanticMask([[0, 1, IGNORE], [2, 3, 4]])
    blob = encode_label_mask(lab)
    assert blob[:4] == b"MSKL" and blob[13:] == bytes([0, 1, 255, 2, 3, 4])
    assert decode_label_mask(blob) == lab


def test_decoders_reject_corruption():
    blob = bytearray(encode_raster(Raster(np.ones((1, 2, 2)))))
    with pytest.raises(FormatError, match="magic"):
        decode_raster(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(FormatError, match="bytes"):
        decode_raster(bytes(blob[:-1]))
    with pytest.raises(FormatError):
        decode_raster(bytes(blob[:5]))
    bad_version = bytes(blob[:4]) + b"\x02" + bytes(blob[5:])
    with pytest.raises(FormatError, match="version"):
        decode_raster(bad_version)
    with pytest.raises(FormatError, match="magic"):
        decode_binary_mask(encode_label_mask(SemanticMask([[1]])))
    with pytest.raises(FormatError, match="0/1"):
        decode_binary_mask(b"MSKB" + struct.pack("<BII", 1, 1, 1) + b"\x02")
