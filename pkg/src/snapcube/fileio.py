"""Container formats and image file I/O.

Hypercube container (HSC1): magic "HSC1", three uint32 LE (B, H, W), then
B*H*W float32 LE values in band-major, row-major order.

Snapshot container (MOS1): magic "MOS1", uint32 LE H and W, uint16 LE period
k, k^2 uint16 LE band indices row-major, then H*W uint16 LE pixel values
(value/65535 maps to the normalized [0,1] range).

Both round-trip bit-exactly. Parse errors name the byte offset at which the
file stopped making sense.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError, ShapeError
from .mosaic import Hypercube, MsfaPattern, NDArrayF, RgbImage, SnapshotMosaic

HSC1_MAGIC = b"HSC1"
MOS1_MAGIC = b"MOS1"
MOSAIC_SCALE = 65535  # uint16 quantization of normalized pixel values

_MAX_DIM = 1 << 24  # dimension overflow guard for container headers


@contextmanager
def atomic_write(path, mode: str = "wb"):
    """Write to a temp file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class _Reader:
    """Tracks the byte offset so parse errors can name it."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.data):
            raise ParseError(
                f"{self.path}: truncated while reading {what}; needed {count} "
                f"bytes, file has {len(self.data) - self.offset} left",
                offset=self.offset)
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def expect_end(self) -> None:
        if self.offset != len(self.data):
            raise ParseError(
                f"{self.path}: {len(self.data) - self.offset} trailing bytes",
                offset=self.offset)


def save_hypercube(cube: Hypercube, path) -> None:
    values = np.ascontiguousarray(cube.values, dtype="<f4")
    b, h, w = values.shape
    with atomic_write(path) as fh:
        fh.write(HSC1_MAGIC)
        fh.write(struct.pack("<III", b, h, w))
        fh.write(values.tobytes())


def load_hypercube(path, band_centers: NDArrayF | None = None) -> Hypercube:
    reader = _Reader(Path(path).read_bytes(), path)
    magic = reader.take(4, "magic")
    if magic != HSC1_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}, expected {HSC1_MAGIC!r}",
                         offset=0)
    b, h, w = struct.unpack("<III", reader.take(12, "dimensions"))
    if not (0 < b <= _MAX_DIM and 0 < h <= _MAX_DIM and 0 < w <= _MAX_DIM):
        raise ParseError(f"{path}: implausible dimensions B={b} H={h} W={w}",
                         offset=4)
    payload = reader.take(4 * b * h * w, "float payload")
    reader.expect_end()
    values = np.frombuffer(payload, dtype="<f4").reshape(b, h, w)
    return Hypercube(values.copy(), band_centers)


def save_mosaic(mosaic: SnapshotMosaic, path) -> None:
    quantized = np.round(mosaic.values.astype(np.float64) * MOSAIC_SCALE)
    values = np.ascontiguousarray(quantized, dtype="<u2")
    pattern = mosaic.pattern
    with atomic_write(path) as fh:
        fh.write(MOS1_MAGIC)
        fh.write(struct.pack("<II", mosaic.height, mosaic.width))
        fh.write(struct.pack("<H", pattern.period))
        fh.write(np.ascontiguousarray(pattern.band_map, dtype="<u2").tobytes())
        fh.write(values.tobytes())


def load_mosaic(path) -> SnapshotMosaic:
    reader = _Reader(Path(path).read_bytes(), path)
    magic = reader.take(4, "magic")
    if magic != MOS1_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}, expected {MOS1_MAGIC!r}",
                         offset=0)
    h, w = struct.unpack("<II", reader.take(8, "dimensions"))
    if not (0 < h <= _MAX_DIM and 0 < w <= _MAX_DIM):
        raise ParseError(f"{path}: implausible dimensions H={h} W={w}", offset=4)
    (period,) = struct.unpack("<H", reader.take(2, "pattern period"))
    if period < 1 or h % period or w % period:
        raise ParseError(
            f"{path}: period {period} does not divide {h}x{w}", offset=12)
    table_offset = reader.offset
    table = np.frombuffer(reader.take(2 * period * period, "pattern table"),
                          dtype="<u2").reshape(period, period)
    try:
        pattern = MsfaPattern(table.astype(np.int64))
    except ShapeError as exc:
        raise ParseError(f"{path}: invalid pattern table: {exc}",
                         offset=table_offset) from exc
    payload = reader.take(2 * h * w, "pixel payload")
    reader.expect_end()
    values = np.frombuffer(payload, dtype="<u2").reshape(h, w)
    return SnapshotMosaic(values.astype(np.float32) / MOSAIC_SCALE, pattern)


def save_gray16(image: NDArrayF, path) -> None:
    """Lossless 16-bit single-channel PNG of normalized [0,1] values."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ShapeError(f"expected 2-D image, got shape {arr.shape}")
    data = np.round(np.clip(arr, 0.0, 1.0).astype(np.float64)
                    * MOSAIC_SCALE).astype(np.uint16)
    with atomic_write(path) as fh:
        Image.fromarray(data, mode="I;16").save(fh, format="PNG")


def load_gray16(path) -> NDArrayF:
    with Image.open(path) as img:
        data = np.array(img)
    if data.ndim != 2:
        raise ParseError(f"{path}: expected single-channel image, got {data.shape}")
    if data.dtype == np.uint8:
        return data.astype(np.float32) / 255.0
    return data.astype(np.float32) / MOSAIC_SCALE


def save_rgb8(rgb: RgbImage, path) -> None:
    """8-bit RGB PNG of a display rendering."""
    data = np.round(rgb.values.astype(np.float64) * 255.0).astype(np.uint8)
    with atomic_write(path) as fh:
        Image.fromarray(data.transpose(1, 2, 0), mode="RGB").save(fh, format="PNG")


def load_rgb8(path) -> RgbImage:
    with Image.open(path) as img:
        data = np.array(img.convert("RGB"))
    return RgbImage(data.transpose(2, 0, 1).astype(np.float32) / 255.0)


def file_digest(path) -> str:
    """SHA-256 of a file's contents, for run records."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
