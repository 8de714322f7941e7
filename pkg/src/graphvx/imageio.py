"""Image files: binary PGM/PPM and a small raw container for other formats.

Raw layout: ASCII header ``GVXRAW <FORMAT> <WIDTH> <HEIGHT> <CHANNELS>\\n``
followed by the samples in row-major order, channels interleaved,
little-endian.  UYVY samples therefore appear in their packed byte order.
"""
from __future__ import annotations

import numpy as np

from . import formats as F
from .formats import Format


class ImageFormatError(Exception):
    pass


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_image(path: str) -> tuple[np.ndarray, Format]:
    with open(path, "rb") as fh:
        data = fh.read()
    return decode(data)


def decode(data: bytes) -> tuple[np.ndarray, Format]:
    if data[:2] in (b"P5", b"P6"):
        magic, pos = _read_token(data, 0)
        w, pos = _read_token(data, pos)
        h, pos = _read_token(data, pos)
        mx, pos = _read_token(data, pos)
        pos += 1  # single whitespace after maxval
        try:
            w, h, mx = int(w), int(h), int(mx)
        except ValueError:
            raise ImageFormatError("malformed PNM header") from None
        if mx != 255:
            raise ImageFormatError(f"only 8-bit PNM is supported (maxval {mx})")
        c = 1 if magic == b"P5" else 3
        body = data[pos:pos + w * h * c]
        if len(body) != w * h * c:
            raise ImageFormatError("truncated PNM data")
        arr = np.frombuffer(body, dtype=np.uint8)
        if c == 1:
            return arr.reshape(h, w).copy(), Format.U8
        return arr.reshape(h, w, 3).copy(), Format.RGB
    if data.startswith(b"GVXRAW "):
        nl = data.index(b"\n")
        parts = data[:nl].decode("ascii").split()
        if len(parts) != 5:
            raise ImageFormatError("malformed raw header")
        fmt = Format(parts[1])
        w, h, c = int(parts[2]), int(parts[3]), int(parts[4])
        if c != F.channels(fmt):
            raise ImageFormatError(f"{fmt} has {F.channels(fmt)} channels, header says {c}")
        dt = F.DTYPE[fmt]
        body = data[nl + 1:]
        n = w * h * c
        if len(body) != n * dt.itemsize:
            raise ImageFormatError("raw payload size does not match header")
        arr = np.frombuffer(body, dtype=dt).reshape((h, w) if c == 1 else (h, w, c)).copy()
        return arr, fmt
    raise ImageFormatError("unrecognized image file")


def encode(arr: np.ndarray, fmt: Format) -> bytes:
    fmt = Format(fmt)
    arr = np.asarray(arr)
    h, w = arr.shape[:2]
    if fmt == Format.U8:
        return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr, dtype=np.uint8).tobytes()
    if fmt == Format.RGB:
        return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr, dtype=np.uint8).tobytes()
    c = F.channels(fmt)
    head = f"GVXRAW {fmt.value} {w} {h} {c}\n".encode("ascii")
    return head + np.ascontiguousarray(arr, dtype=F.DTYPE[fmt]).tobytes()


def write_image(path: str, arr: np.ndarray, fmt: Format) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(arr, fmt))


def extension(fmt: Format) -> str:
    return {Format.U8: ".pgm", Format.RGB: ".ppm"}.get(Format(fmt), ".raw")
