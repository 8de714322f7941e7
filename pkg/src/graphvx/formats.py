"""Pixel/element formats, data kinds and resolved data descriptors."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np


class Format(str, Enum):
    U8 = "U8"
    U16 = "U16"
    S16 = "S16"
    S32 = "S32"
    F32 = "F32"
    RGB = "RGB"
    UYVY = "UYVY"
    UNRESOLVED = "UNRESOLVED"
    # array-only element format: (x, y) pairs
    COORD = "COORD"
    # internal expression domains, never stored
    I64 = "I64"
    F64 = "F64"

    def __str__(self) -> str:
        return self.value


STORAGE = frozenset({Format.U8, Format.U16, Format.S16, Format.S32, Format.F32})
INTEGER = frozenset({Format.U8, Format.U16, Format.S16, Format.S32, Format.I64})
FLOATING = frozenset({Format.F32, Format.F64})

INT_RANGE = {
    Format.U8: (0, 255),
    Format.U16: (0, 65535),
    Format.S16: (-32768, 32767),
    Format.S32: (-(2**31), 2**31 - 1),
    Format.I64: (-(2**63), 2**63 - 1),
}

CHANNELS = {Format.RGB: 3, Format.UYVY: 2}

DTYPE = {
    Format.U8: np.dtype(np.uint8),
    Format.U16: np.dtype("<u2"),
    Format.S16: np.dtype("<i2"),
    Format.S32: np.dtype("<i4"),
    Format.F32: np.dtype("<f4"),
    Format.RGB: np.dtype(np.uint8),
    Format.UYVY: np.dtype(np.uint8),
    Format.COORD: np.dtype("<i4"),
    Format.I64: np.dtype(np.int64),
    Format.F64: np.dtype(np.float64),
}


def channels(fmt: Format) -> int:
    return CHANNELS.get(Format(fmt), 1)


def is_float(fmt: Format) -> bool:
    return Format(fmt) in FLOATING


class DataKind(str, Enum):
    IMAGE = "IMAGE"
    SCALAR = "SCALAR"
    ARRAY = "ARRAY"
    MATRIX = "MATRIX"
    DISTRIBUTION = "DISTRIBUTION"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Desc:
    """Shape and format of a data object.

    Only the fields relevant to ``kind`` are meaningful; the rest stay 0.
    ``width``/``height`` of an unresolved virtual image are 0.
    """

    kind: DataKind
    format: Format = Format.UNRESOLVED
    width: int = 0
    height: int = 0
    capacity: int = 0
    rows: int = 0
    cols: int = 0
    bins: int = 0
    offset: int = 0
    range: int = 0

    @property
    def resolved(self) -> bool:
        if self.format == Format.UNRESOLVED:
            return False
        if self.kind == DataKind.IMAGE:
            return self.width >= 1 and self.height >= 1
        return True

    def with_(self, **kw) -> "Desc":
        return replace(self, **kw)

    def shape(self) -> tuple:
        """numpy shape of a buffer holding this object."""
        if self.kind == DataKind.IMAGE:
            c = channels(self.format)
            return (self.height, self.width) if c == 1 else (self.height, self.width, c)
        if self.kind == DataKind.SCALAR:
            return ()
        if self.kind == DataKind.ARRAY:
            return (self.capacity, 2) if self.format == Format.COORD else (self.capacity,)
        if self.kind == DataKind.MATRIX:
            return (self.rows, self.cols)
        if self.kind == DataKind.DISTRIBUTION:
            return (self.bins,)
        raise ValueError(self.kind)

    def dtype(self) -> np.dtype:
        if self.kind == DataKind.DISTRIBUTION:
            return np.dtype("<i4")
        return DTYPE[self.format]

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "format": self.format.value}
        for f in ("width", "height", "capacity", "rows", "cols", "bins", "offset", "range"):
            v = getattr(self, f)
            if v:
                out[f] = v
        return out


def image(width: int, height: int, fmt: Format) -> Desc:
    return Desc(DataKind.IMAGE, Format(fmt), width=width, height=height)


def scalar(fmt: Format) -> Desc:
    return Desc(DataKind.SCALAR, Format(fmt))


def array(capacity: int, fmt: Format) -> Desc:
    return Desc(DataKind.ARRAY, Format(fmt), capacity=capacity)


def matrix(rows: int, cols: int, fmt: Format) -> Desc:
    return Desc(DataKind.MATRIX, Format(fmt), rows=rows, cols=cols)


def distribution(bins: int, offset: int, rng: int) -> Desc:
    return Desc(DataKind.DISTRIBUTION, Format.S32, bins=bins, offset=offset, range=rng)
