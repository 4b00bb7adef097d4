"""Little-endian binary formats for rasters, binary masks and label masks.

Raster (``MSRA``)::

    magic "MSRA" | version u8 = 1 | dtype u8 (0=u8, 1=u16, 2=f32)
    | bands u16 | height u32 | width u32 | band-sequential samples

Binary mask (``MSKB``)::

    magic "MSKB" | version u8 = 1 | height u32 | width u32 | row-major bytes (0/1)

Semantic mask (``MSKL``)::

    magic "MSKL" | version u8 = 1 | height u32 | width u32 | row-major class ids

No padding anywhere.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import Raster, SemanticMask

VERSION = 1

RASTER_MAGIC = b"MSRA"
BINARY_MASK_MAGIC = b"MSKB"
LABEL_MASK_MAGIC = b"MSKL"

_RASTER_HEADER = struct.Struct("<4sBBHII")
_MASK_HEADER = struct.Struct("<4sBII")

# widening order matters: writers fall back to the next entry when lossy
DTYPES = {"u8": (0, np.dtype("<u1")), "u16": (1, np.dtype("<u2")), "f32": (2, np.dtype("<f4"))}
_DTYPE_BY_CODE = {code: (name, dt) for name, (code, dt) in DTYPES.items()}


class FormatError(ValueError):
    """Raised when a blob does not decode under the expected format."""


def _lossless(samples: np.ndarray, dtype: np.dtype) -> bool:
    with np.errstate(over="ignore", invalid="ignore"):
        cast = samples.astype(dtype)
    return bool(np.array_equal(cast.astype(np.float64), samples))


def raster_encoding(samples: np.ndarray, preferred: str | None = None) -> str:
    """Narrowest lossless on-disk type, starting from ``preferred`` if given."""
    names = list(DTYPES)
    start = names.index(preferred) if preferred else 0
    for name in names[start:]:
        if _lossless(samples, DTYPES[name][1]):
            return name
    raise FormatError("raster samples are not exactly representable as float32")


def encode_raster(raster: Raster, dtype: str | None = None) -> bytes:
    """Encode with ``dtype``, else the raster's own encoding, widening if lossy."""
    name = raster_encoding(raster.samples, dtype or raster.encoding)
    code, dt = DTYPES[name]
    if raster.bands > 0xFFFF:
        raise FormatError(f"too many bands for the raster format: {raster.bands}")
    header = _RASTER_HEADER.pack(
        RASTER_MAGIC, VERSION, code, raster.bands, raster.height, raster.width
    )
    return header + raster.samples.astype(dt).tobytes()


def decode_raster(data: bytes) -> Raster:
    if len(data) < _RASTER_HEADER.size:
        raise FormatError("truncated raster header")
    magic, version, code, bands, height, width = _RASTER_HEADER.unpack_from(data)
    if magic != RASTER_MAGIC:
        raise FormatError(f"bad raster magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported raster version {version}")
    if code not in _DTYPE_BY_CODE:
        raise FormatError(f"unknown raster dtype code {code}")
    name, dt = _DTYPE_BY_CODE[code]
    expected = bands * height * width * dt.itemsize
    body = data[_RASTER_HEADER.size :]
    if len(body) != expected:
        raise FormatError(f"raster body is {len(body)} bytes, expected {expected}")
    samples = np.frombuffer(body, dtype=dt).reshape(bands, height, width)
    return Raster(samples, encoding=name)


def _encode_plane(magic: bytes, values: np.ndarray) -> bytes:
    h, w = values.shape
    return _MASK_HEADER.pack(magic, VERSION, h, w) + np.ascontiguousarray(values, np.uint8).tobytes()


def _decode_plane(magic: bytes, data: bytes) -> np.ndarray:
    if len(data) < _MASK_HEADER.size:
        raise FormatError("truncated mask header")
    got, version, h, w = _MASK_HEADER.unpack_from(data)
    if got != magic:
        raise FormatError(f"bad mask magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported mask version {version}")
    body = data[_MASK_HEADER.size :]
    if len(body) != h * w:
        raise FormatError(f"mask body is {len(body)} bytes, expected {h * w}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def encode_binary_mask(mask: np.ndarray) -> bytes:
    return _encode_plane(BINARY_MASK_MAGIC, np.asarray(mask, dtype=bool))


def decode_binary_mask(data: bytes) -> np.ndarray:
    plane = _decode_plane(BINARY_MASK_MAGIC, data)
    if plane.size and plane.max() > 1:
        raise FormatError("binary mask contains values other than 0/1")
    return plane.astype(bool)


def encode_label_mask(mask: SemanticMask) -> bytes:
    return _encode_plane(LABEL_MASK_MAGIC, mask.values)


def decode_label_mask(data: bytes) -> SemanticMask:
    return SemanticMask(_decode_plane(LABEL_MASK_MAGIC, data))


def read_raster(path) -> Raster:
    return decode_raster(Path(path).read_bytes())


def write_raster(path, raster: Raster, dtype: str | None = None) -> None:
    Path(path).write_bytes(encode_raster(raster, dtype))


def read_label_mask(path) -> SemanticMask:
    return decode_label_mask(Path(path).read_bytes())


def write_label_mask(path, mask: SemanticMask) -> None:
    Path(path).write_bytes(encode_label_mask(mask))
