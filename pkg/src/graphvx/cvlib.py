"""OpenVX-style vision functions expressed as point/local/global kernels.

Each registry entry carries the function signature, an output-descriptor
rule used by the verifier, and an expansion into abstraction nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from . import formats as F
from .formats import DataKind, Desc, Format
from .ir import (
    Acc,
    Binary,
    Boundary,
    Combine,
    ConstF,
    ConstI,
    Direction,
    HistogramKernel,
    InputPixel,
    KernelSignature,
    LocalKernel,
    Lookup,
    MaskCoef,
    Param,
    PointKernel,
    ReduceKernel,
    ScaleKernel,
    ScanKernel,
    Select,
    State,
    TableKernel,
    Unary,
    WindowPixel,
    bin_,
    cast,
    round_half_away,
)

GAUSS_MASK_F = (
    (0.057118, 0.124758, 0.057118),
    (0.124758, 0.272496, 0.124758),
    (0.057118, 0.124758, 0.057118),
)
GAUSS_MASK_I = ((1, 2, 1), (2, 4, 2), (1, 2, 1))
SOBEL_X = ((-1, 0, 1), (-2, 0, 2), (-1, 0, 1))
SOBEL_Y = ((-1, -2, -1), (0, 0, 0), (1, 2, 1))


class InferError(Exception):
    """Output rule failure; ``code`` is a verifier diagnostic code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class CVKernel:
    name: str
    signature: KernelSignature
    infer: Callable  # (ins, declared, attrs, values) -> {param name: Desc}
    expand: Callable  # (io, attrs, builder) -> None
    check: Callable | None = None  # (ins, attrs, values) -> None, raises InferError

    @property
    def kind(self) -> str:
        return KIND[self.name]


REGISTRY: dict[str, CVKernel] = {}
KIND: dict[str, str] = {}

IN, OUT = Direction.INPUT, Direction.OUTPUT
OPT = State.OPTIONAL
IMG = DataKind.IMAGE


def _p(name, d, kind=IMG, fmts=None, state=State.REQUIRED):
    return Param(name, d, kind, frozenset(Format(f) for f in fmts) if fmts else None, state)


def register(name, kind, params, infer, expand, check=None):
    REGISTRY[name] = CVKernel(name, KernelSignature(tuple(params)), infer, expand, check)
    KIND[name] = kind


# -- helpers -----------------------------------------------------------------


def _same_dims(ins: dict, names) -> tuple[int, int]:
    dims = {(ins[n].width, ins[n].height) for n in names if ins.get(n) is not None}
    if len(dims) != 1:
        raise InferError("FormatMismatch", f"input images differ in size: {sorted(dims)}")
    return dims.pop()


def _choose(declared: Desc | None, default: Format, allowed) -> Format:
    if declared is not None and declared.format != Format.UNRESOLVED:
        if declared.format not in allowed:
            raise InferError("FormatMismatch", f"output format {declared.format} not in {sorted(map(str, allowed))}")
        return declared.format
    return default


def _image_out(ins, declared, name, fmt, like=("input",)):
    w, h = _same_dims(ins, like)
    return {name: F.image(w, h, fmt)}


def _policy(attrs) -> str:
    p = attrs.get("policy", "saturate")
    if p not in ("saturate", "wrap"):
        raise InferError("FormatMismatch", f"unknown overflow policy {p!r}")
    return p


def _border(attrs) -> Boundary:
    try:
        return Boundary.parse(attrs.get("border"))
    except ValueError as exc:
        raise InferError("FormatMismatch", str(exc)) from None


X, Y = InputPixel(0), InputPixel(1)
W0 = WindowPixel(0, 0, 0)


class Builder:
    """Adds abstraction nodes for one application node to an implementation graph."""

    def __init__(self, impl, origin: int):
        self.impl = impl
        self.origin = origin

    def virtual(self, desc: Desc, name: str | None = None):
        return self.impl.create_virtual(desc, name)

    def node(self, kernel, inputs, output):
        n = self.impl.add_node(kernel, list(inputs) + [output], strict=False)
        self.impl.provenance[n.id] = self.origin
        return n


# -- point functions ---------------------------------------------------------

ARITH = (Format.U8, Format.S16, Format.S32, Format.F32)


def _binary_infer(default_rule):
    def infer(ins, declared, attrs, values):
        a, b = ins["in1"].format, ins["in2"].format
        out = _choose(declared.get("out"), default_rule(a, b), ARITH)
        _policy(attrs)
        return _image_out(ins, declared, "out", out, ("in1", "in2"))

    return infer


def _arith_default(a, b):
    if Format.F32 in (a, b):
        return Format.F32
    if a == b == Format.U8:
        return Format.U8
    if Format.S32 in (a, b):
        return Format.S32
    return Format.S16


def _binary_expand(name, fn):
    def expand(io, attrs, b):
        out = io["out"]
        body = cast(out.format, fn(X, Y, attrs, out.format), _policy(attrs))
        b.node(PointKernel(name, 2, body), [io["in1"], io["in2"]], out)

    return expand


def _bin_params(fmts=ARITH):
    return [_p("in1", IN, fmts=fmts), _p("in2", IN, fmts=fmts), _p("out", OUT)]


register("Add", "point", _bin_params(), _binary_infer(_arith_default),
         _binary_expand("Add", lambda a, b, at, o: a + b))
register("Subtract", "point", _bin_params(), _binary_infer(_arith_default),
         _binary_expand("Subtract", lambda a, b, at, o: a - b))
register("AbsDiff", "point", _bin_params(), _binary_infer(_arith_default),
         _binary_expand("AbsDiff", lambda a, b, at, o: Unary("abs", a - b)))


def _mul_body(a, b, attrs, out):
    scale = float(attrs.get("scale", 1.0))
    if scale == 1.0 and out != Format.F32:
        return a * b
    return (a * b) * ConstF(scale)


register("Multiply", "point", _bin_params(), _binary_infer(_arith_default), _binary_expand("Multiply", _mul_body))


def _bitwise_infer(ins, declared, attrs, values):
    _choose(declared.get("out"), Format.U8, (Format.U8,))
    return _image_out(ins, declared, "out", Format.U8, [n for n in ("in1", "in2", "input") if n in ins])


def _bitwise_expand(name, op):
    def expand(io, attrs, b):
        b.node(PointKernel(name, 2, cast(Format.U8, bin_(op, X, Y), "wrap")), [io["in1"], io["in2"]], io["out"])

    return expand


for _name, _op in (("And", "and"), ("Or", "or"), ("Xor", "xor")):
    register(_name, "point", _bin_params((Format.U8,)), _bitwise_infer, _bitwise_expand(_name, _op))

register(
    "Not", "point", [_p("input", IN, fmts=(Format.U8,)), _p("out", OUT)], _bitwise_infer,
    lambda io, attrs, b: b.node(PointKernel("Not", 1, cast(Format.U8, Unary("not", X), "wrap")), [io["input"]], io["out"]),
)

_CHANNELS = {Format.UYVY: {"Y": 1}, Format.RGB: {"R": 0, "G": 1, "B": 2}}


def _extract_channel(ins, attrs) -> int:
    fmt = ins["input"].format
    ch = attrs.get("channel", "Y")
    try:
        return _CHANNELS[fmt][ch]
    except KeyError:
        raise InferError("FormatMismatch", f"channel {ch!r} not available in {fmt}") from None


def _channel_extract_infer(ins, declared, attrs, values):
    _extract_channel(ins, attrs)
    _choose(declared.get("out"), Format.U8, (Format.U8,))
    return _image_out(ins, declared, "out", Format.U8)


register(
    "ChannelExtract", "point",
    [_p("input", IN, fmts=(Format.UYVY, Format.RGB)), _p("out", OUT)],
    _channel_extract_infer,
    lambda io, attrs, b: b.node(
        PointKernel("ChannelExtract", 1, InputPixel(0, _CHANNELS[io["input"].format][attrs.get("channel", "Y")])),
        [io["input"]], io["out"],
    ),
)


def _combine_infer(ins, declared, attrs, values):
    _choose(declared.get("out"), Format.RGB, (Format.RGB,))
    return _image_out(ins, declared, "out", Format.RGB, ("plane0", "plane1", "plane2"))


register(
    "ChannelCombine", "point",
    [_p("plane0", IN, fmts=(Format.U8,)), _p("plane1", IN, fmts=(Format.U8,)),
     _p("plane2", IN, fmts=(Format.U8,)), _p("out", OUT)],
    _combine_infer,
    lambda io, attrs, b: b.node(
        PointKernel("ChannelCombine", 3, (InputPixel(0), InputPixel(1), InputPixel(2))),
        [io["plane0"], io["plane1"], io["plane2"]], io["out"],
    ),
)

_BITS = {Format.U8: 8, Format.U16: 16, Format.S16: 16, Format.S32: 32}


def _convert_infer(ins, declared, attrs, values):
    src = ins["input"].format
    default = {Format.U8: Format.S16}.get(src, Format.U8)
    out = _choose(declared.get("out"), default, ARITH + (Format.U16,))
    _policy(attrs)
    shift = int(attrs.get("shift", 0))
    if not 0 <= shift < 32:
        raise InferError("FormatMismatch", f"shift {shift} out of range [0, 32)")
    return _image_out(ins, declared, "out", out)


def _convert_expand(io, attrs, b):
    src, dst = io["input"].format, io["out"].format
    shift = int(attrs.get("shift", 0))
    policy = _policy(attrs)
    if src == Format.F32 or dst == Format.F32 or shift == 0:
        body = cast(dst, X, policy)
    elif _BITS[dst] > _BITS[src]:
        body = cast(dst, bin_("shl", X, shift), policy)
    else:
        body = cast(dst, bin_("shr", X, shift), policy)
    b.node(PointKernel("ConvertDepth", 1, body), [io["input"]], io["out"])


register("ConvertDepth", "point", [_p("input", IN, fmts=ARITH + (Format.U16,)), _p("out", OUT)],
         _convert_infer, _convert_expand)


def _copy_infer(ins, declared, attrs, values):
    fmt = ins["input"].format
    _choose(declared.get("out"), fmt, (fmt,))
    return _image_out(ins, declared, "out", fmt)


def _copy_expand(io, attrs, b):
    n = F.channels(io["input"].format)
    bodies = tuple(InputPixel(0, c) for c in range(n))
    b.node(PointKernel("Copy", 1, bodies), [io["input"]], io["out"])


register("Copy", "point", [_p("input", IN, fmts=tuple(F.STORAGE) + (Format.RGB, Format.UYVY)), _p("out", OUT)],
         _copy_infer, _copy_expand)


def _grad_infer(default_for_int):
    def infer(ins, declared, attrs, values):
        a, b = ins["grad_x"].format, ins["grad_y"].format
        if (a == Format.F32) != (b == Format.F32):
            raise InferError("FormatMismatch", "gradient formats must match")
        out = Format.F32 if a == Format.F32 and default_for_int != Format.U8 else default_for_int
        out = _choose(declared.get("out"), out, (default_for_int, Format.F32) if default_for_int != Format.U8 else (Format.U8,))
        return _image_out(ins, declared, "out", out, ("grad_x", "grad_y"))

    return infer


def _magnitude_expand(io, attrs, b):
    body = cast(io["out"].format, Unary("sqrt", X * X + Y * Y))
    b.node(PointKernel("Magnitude", 2, body), [io["grad_x"], io["grad_y"]], io["out"])


def _phase_expand(io, attrs, b):
    ang = bin_("atan2", Y, X)
    ang = Select(bin_("lt", ang, 0.0), ang + ConstF(2 * math.pi), ang)
    body = cast(Format.U8, ang * ConstF(256.0 / (2 * math.pi)), "wrap")
    b.node(PointKernel("Phase", 2, body), [io["grad_x"], io["grad_y"]], io["out"])


_GRADS = (Format.S16, Format.F32)
register("Magnitude", "point", [_p("grad_x", IN, fmts=_GRADS), _p("grad_y", IN, fmts=_GRADS), _p("out", OUT)],
         _grad_infer(Format.S16), _magnitude_expand)
register("Phase", "point", [_p("grad_x", IN, fmts=_GRADS), _p("grad_y", IN, fmts=_GRADS), _p("out", OUT)],
         _grad_infer(Format.U8), _phase_expand)


def _threshold_check(ins, attrs, values):
    kind = attrs.get("type", "binary")
    if kind not in ("binary", "range"):
        raise InferError("FormatMismatch", f"unknown threshold type {kind!r}")
    if kind == "range" and ins.get("upper") is None:
        raise InferError("UnboundParam", "range threshold needs an upper bound")
    fmt = ins["input"].format
    if fmt in F.INT_RANGE:
        lo, hi = F.INT_RANGE[fmt]
        for n in ("thresh", "upper"):
            v = values.get(n)
            if v is not None and not lo <= v <= hi:
                raise InferError("FormatMismatch", f"threshold {n}={v} outside {fmt} range [{lo}, {hi}]")


def _threshold_infer(ins, declared, attrs, values):
    _threshold_check(ins, attrs, values)
    _choose(declared.get("out"), Format.U8, (Format.U8,))
    return _image_out(ins, declared, "out", Format.U8)


def _threshold_expand(io, attrs, b):
    t_true = int(attrs.get("true_value", 255))
    t_false = int(attrs.get("false_value", 0))
    if attrs.get("type", "binary") == "range":
        outside = bin_("or", bin_("lt", X, Y), bin_("gt", X, InputPixel(2)))
        body = cast(Format.U8, Select(outside, ConstI(t_false), ConstI(t_true)))
        b.node(PointKernel("Threshold", 3, body), [io["input"], io["thresh"], io["upper"]], io["out"])
    else:
        body = cast(Format.U8, Select(bin_("gt", X, Y), ConstI(t_true), ConstI(t_false)))
        b.node(PointKernel("Threshold", 2, body), [io["input"], io["thresh"]], io["out"])


register(
    "Threshold", "point",
    [_p("input", IN, fmts=(Format.U8, Format.S16, Format.S32, Format.F32)),
     _p("thresh", IN, DataKind.SCALAR), _p("out", OUT), _p("upper", IN, DataKind.SCALAR, state=OPT)],
    _threshold_infer, _threshold_expand,
)


# -- local functions ---------------------------------------------------------


def _unary_image_infer(allowed, default=None):
    def infer(ins, declared, attrs, values):
        fmt = ins["input"].format
        out = _choose(declared.get("out"), default or fmt, allowed if default else (fmt,))
        _border(attrs)
        return _image_out(ins, declared, "out", out)

    return infer


def _div_post(fmt: Format, divisor: int):
    if fmt == Format.F32:
        return cast(fmt, Acc() / ConstF(float(divisor)))
    return cast(fmt, Acc() / ConstI(divisor))


def box_kernel(fmt: Format, boundary: Boundary = Boundary()) -> LocalKernel:
    return LocalKernel("Box3x3", 1, 3, 3, W0, Combine.SUM, _div_post(fmt, 9), boundary)


def gaussian_kernel(fmt: Format, boundary: Boundary = Boundary(), float_mask: bool = False) -> LocalKernel:
    """3x3 Gaussian; integer mask /16 for integer paths, float mask otherwise."""
    if float_mask or fmt == Format.F32:
        post = cast(fmt, Acc())
        return LocalKernel("Gaussian3x3", 1, 3, 3, MaskCoef(0, 0) * W0, Combine.SUM, post, boundary, GAUSS_MASK_F)
    return LocalKernel("Gaussian3x3", 1, 3, 3, MaskCoef(0, 0) * W0, Combine.SUM, _div_post(fmt, 16), boundary,
                       GAUSS_MASK_I)


def sobel_kernel(axis: str, boundary: Boundary = Boundary(), fmt: Format = Format.S16) -> LocalKernel:
    mask = SOBEL_X if axis == "x" else SOBEL_Y
    return LocalKernel(f"Sobel{axis.upper()}", 1, 3, 3, MaskCoef(0, 0) * W0, Combine.SUM, cast(fmt, Acc()),
                       boundary, mask)


def median_kernel(boundary: Boundary = Boundary()) -> LocalKernel:
    # 5th smallest of 9 = max over all 5-element subsets of their minimum
    taps = [WindowPixel(0, dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    terms = []
    for sub in combinations(taps, 5):
        m = sub[0]
        for t in sub[1:]:
            m = bin_("min", m, t)
        terms.append(m)
    body = terms[0]
    for t in terms[1:]:
        body = bin_("max", body, t)
    return LocalKernel("Median3x3", 1, 3, 3, body, None, None, boundary)


register("Box3x3", "local", [_p("input", IN, fmts=ARITH), _p("out", OUT)], _unary_image_infer(ARITH),
         lambda io, attrs, b: b.node(box_kernel(io["out"].format, _border(attrs)), [io["input"]], io["out"]))
register(
    "Gaussian3x3", "local", [_p("input", IN, fmts=(Format.U8, Format.S16, Format.F32)), _p("out", OUT)],
    _unary_image_infer((Format.U8, Format.S16, Format.F32)),
    lambda io, attrs, b: b.node(
        gaussian_kernel(io["out"].format, _border(attrs), attrs.get("precision") == "float"), [io["input"]], io["out"]
    ),
)
register(
    "Dilate3x3", "local", [_p("input", IN, fmts=(Format.U8,)), _p("out", OUT)], _unary_image_infer((Format.U8,)),
    lambda io, attrs, b: b.node(LocalKernel("Dilate3x3", 1, 3, 3, W0, Combine.MAX, None, _border(attrs)),
                                [io["input"]], io["out"]),
)
register(
    "Erode3x3", "local", [_p("input", IN, fmts=(Format.U8,)), _p("out", OUT)], _unary_image_infer((Format.U8,)),
    lambda io, attrs, b: b.node(LocalKernel("Erode3x3", 1, 3, 3, W0, Combine.MIN, None, _border(attrs)),
                                [io["input"]], io["out"]),
)
register("Median3x3", "local", [_p("input", IN, fmts=(Format.U8,)), _p("out", OUT)], _unary_image_infer((Format.U8,)),
         lambda io, attrs, b: b.node(median_kernel(_border(attrs)), [io["input"]], io["out"]))


def _sobel_infer(ins, declared, attrs, values):
    _border(attrs)
    w, h = _same_dims(ins, ("input",))
    out = {}
    for n in ("output_x", "output_y"):
        if n in declared:
            out[n] = F.image(w, h, _choose(declared[n], Format.S16, (Format.S16,)))
    if not out:
        raise InferError("UnboundParam", "Sobel3x3 needs at least one output")
    return out


def _sobel_expand(io, attrs, b):
    for axis in ("x", "y"):
        o = io.get(f"output_{axis}")
        if o is not None:
            b.node(sobel_kernel(axis, _border(attrs)), [io["input"]], o)


register(
    "Sobel3x3", "local",
    [_p("input", IN, fmts=(Format.U8,)), _p("output_x", OUT, state=OPT), _p("output_y", OUT, state=OPT)],
    _sobel_infer, _sobel_expand,
)


def _convolve_check(ins, attrs, values):
    m = ins["conv"]
    if m.rows % 2 == 0 or m.cols % 2 == 0:
        raise InferError("FormatMismatch", f"convolution matrix must have odd dims, got {m.rows}x{m.cols}")
    if values.get("conv") is None:
        raise InferError("FormatMismatch", "convolution matrix has no coefficients")
    if int(attrs.get("scale", 1)) < 1:
        raise InferError("FormatMismatch", "convolution scale must be >= 1")


def _convolve_infer(ins, declared, attrs, values):
    _convolve_check(ins, attrs, values)
    out = _choose(declared.get("out"), Format.U8, (Format.U8, Format.S16))
    _border(attrs)
    return _image_out(ins, declared, "out", out)


def convolve_kernel(coeffs, scale: int, fmt: Format, boundary: Boundary = Boundary()) -> LocalKernel:
    """True convolution: the coefficient matrix is flipped onto the window."""
    c = np.asarray(coeffs)
    flipped = tuple(tuple(int(v) if c.dtype.kind in "iu" else float(v) for v in row) for row in c[::-1, ::-1])
    h, w = c.shape
    post = cast(fmt, Acc() / ConstI(int(scale))) if scale != 1 else cast(fmt, Acc())
    return LocalKernel("Convolve", 1, w, h, MaskCoef(0, 0) * W0, Combine.SUM, post, boundary, flipped)


def _convolve_expand(io, attrs, b):
    k = convolve_kernel(io["conv"].value, int(attrs.get("scale", 1)), io["out"].format, _border(attrs))
    # matrix stays bound so it is accounted as a host-visible input
    node = b.impl.add_node(
        LocalKernel(k.name, 2, k.window_w, k.window_h, k.tap_body, k.combine, k.post_body, k.boundary, k.mask),
        [io["input"], io["conv"], io["out"]], strict=False,
    )
    b.impl.provenance[node.id] = b.origin


register(
    "Convolve", "local",
    [_p("input", IN, fmts=(Format.U8, Format.S16)), _p("conv", IN, DataKind.MATRIX, fmts=(Format.S16, Format.S32)),
     _p("out", OUT)],
    _convolve_infer, _convolve_expand,
)


# -- global functions --------------------------------------------------------


def _histogram_infer(ins, declared, attrs, values):
    d = declared.get("distribution")
    if d is None or d.bins < 1:
        raise InferError("UnresolvedVirtualFormat", "histogram needs a concrete distribution")
    return {"distribution": d}


def histogram_kernel(bins: int, offset: int, rng: int) -> HistogramKernel:
    bin_of = ((X - ConstI(offset)) * ConstI(bins)) / ConstI(rng)
    return HistogramKernel("Histogram", bins, offset, rng, bin_of)


register(
    "Histogram", "histogram",
    [_p("input", IN, fmts=(Format.U8,)), _p("distribution", OUT, DataKind.DISTRIBUTION)],
    _histogram_infer,
    lambda io, attrs, b: b.node(
        histogram_kernel(io["distribution"].desc.bins, io["distribution"].desc.offset, io["distribution"].desc.range),
        [io["input"]], io["distribution"],
    ),
)


def _minmax_infer(ins, declared, attrs, values):
    fmt = ins["input"].format
    out = {}
    for n in ("minVal", "maxVal"):
        _choose(declared.get(n), fmt, (fmt,))
        out[n] = F.scalar(fmt)
    for n in ("minLoc", "maxLoc"):
        d = declared.get(n)
        if d is not None:
            if d.format not in (Format.COORD, Format.UNRESOLVED) or d.capacity < 1:
                raise InferError("FormatMismatch", f"{n} must be a COORD array with capacity >= 1")
            out[n] = F.array(d.capacity, Format.COORD)
    return out


def minmax_kernels(fmt: Format, which: str, capacity: int = 0) -> ReduceKernel:
    lo, hi = F.INT_RANGE[fmt]
    op = "min" if which == "min" else "max"
    init = hi if which == "min" else lo
    combine = bin_(op, Acc(), X)
    if capacity:
        return ReduceKernel(f"{op.capitalize()}Loc", init, combine, track_index=True, capacity=capacity)
    return ReduceKernel(op.capitalize(), init, combine, cast(fmt, Acc()))


def _minmax_expand(io, attrs, b):
    fmt = io["input"].format
    for which in ("min", "max"):
        b.node(minmax_kernels(fmt, which), [io["input"]], io[f"{which}Val"])
        loc = io.get(f"{which}Loc")
        if loc is not None:
            b.node(minmax_kernels(fmt, which, loc.desc.capacity), [io["input"]], loc)


register(
    "MinMaxLoc", "reduce",
    [_p("input", IN, fmts=(Format.U8, Format.S16)),
     _p("minVal", OUT, DataKind.SCALAR), _p("maxVal", OUT, DataKind.SCALAR),
     _p("minLoc", OUT, DataKind.ARRAY, state=OPT), _p("maxLoc", OUT, DataKind.ARRAY, state=OPT)],
    _minmax_infer, _minmax_expand,
)


def _meanstd_infer(ins, declared, attrs, values):
    out = {"mean": F.scalar(_choose(declared.get("mean"), Format.F32, (Format.F32,)))}
    if "stddev" in declared:
        out["stddev"] = F.scalar(_choose(declared.get("stddev"), Format.F32, (Format.F32,)))
    return out


def mean_kernel(npix: int) -> ReduceKernel:
    return ReduceKernel("Mean", 0, Acc() + X, cast(Format.F32, Acc() / ConstF(float(npix))))


def stddev_kernel(npix: int) -> ReduceKernel:
    d = X - Y
    return ReduceKernel("StdDev", 0.0, Acc() + d * d,
                        cast(Format.F32, Unary("sqrt", Acc() / ConstF(float(npix)))), extra=1)


def _meanstd_expand(io, attrs, b):
    src = io["input"]
    npix = src.desc.width * src.desc.height
    mean = io["mean"]
    b.node(mean_kernel(npix), [src], mean)
    if io.get("stddev") is not None:
        b.node(stddev_kernel(npix), [src, mean], io["stddev"])


register(
    "MeanStdDev", "reduce",
    [_p("input", IN, fmts=(Format.U8,)), _p("mean", OUT, DataKind.SCALAR),
     _p("stddev", OUT, DataKind.SCALAR, state=OPT)],
    _meanstd_infer, _meanstd_expand,
)


def _integral_infer(ins, declared, attrs, values):
    _choose(declared.get("out"), Format.S32, (Format.S32,))
    return _image_out(ins, declared, "out", Format.S32)


register("IntegralImage", "scan", [_p("input", IN, fmts=(Format.U8,)), _p("out", OUT)], _integral_infer,
         lambda io, attrs, b: b.node(ScanKernel("IntegralImage"), [io["input"]], io["out"]))


def _scale_infer(ins, declared, attrs, values):
    if attrs.get("interp", "nearest") not in ("nearest", "bilinear"):
        raise InferError("FormatMismatch", f"unknown interpolation {attrs.get('interp')!r}")
    d = declared.get("out")
    if d is None or d.width < 1 or d.height < 1:
        raise InferError("UnresolvedVirtualFormat", "ScaleImage output needs explicit dimensions")
    fmt = _choose(d, ins["input"].format, (ins["input"].format,))
    return {"out": F.image(d.width, d.height, fmt)}


register("ScaleImage", "scale", [_p("input", IN, fmts=(Format.U8,)), _p("out", OUT)], _scale_infer,
         lambda io, attrs, b: b.node(ScaleKernel("ScaleImage", attrs.get("interp", "nearest")), [io["input"]],
                                     io["out"]))


def _equalize_infer(ins, declared, attrs, values):
    _choose(declared.get("out"), Format.U8, (Format.U8,))
    return _image_out(ins, declared, "out", Format.U8)


def _equalize_expand(io, attrs, b):
    dist = b.virtual(F.distribution(256, 0, 256))
    lut = b.virtual(F.array(256, Format.U8))
    b.node(histogram_kernel(256, 0, 256), [io["input"]], dist)
    b.node(TableKernel("EqualizeCDF", "equalize"), [dist], lut)
    b.node(PointKernel("EqualizeLookup", 2, Lookup(1, X)), [io["input"], lut], io["out"])


register("EqualizeHist", "histogram", [_p("input", IN, fmts=(Format.U8,)), _p("out", OUT)], _equalize_infer,
         _equalize_expand)


def equalize_table(counts) -> np.ndarray:
    """Equalization lookup table from a 256-bin histogram."""
    counts = np.asarray(counts, dtype=np.int64)
    cdf = np.cumsum(counts)
    total = int(cdf[-1])
    nz = cdf[cdf > 0]
    cdf_min = int(nz[0]) if len(nz) else 0
    if total == cdf_min:
        return np.arange(256, dtype=np.uint8)
    scaled = (cdf - cdf_min).astype(np.float64) * (255.0 / float(total - cdf_min))
    scaled = np.clip(round_half_away(scaled), 0, 255)
    return scaled.astype(np.uint8)


def kernel_kind(kernel) -> str:
    if isinstance(kernel, str):
        return KIND[kernel]
    return kernel.kind


# -- expansion ---------------------------------------------------------------


def expand(g):
    """Replace every vision-function node by its abstraction nodes.

    ``g`` is a VerifiedGraph (or a Graph whose data descriptors are already
    resolved).  Abstraction nodes pass through unchanged, so expanding an
    implementation graph is the identity.
    """
    from .graph import Graph, UnknownKernel, topo_sort

    graph = getattr(g, "graph", g)
    impl = Graph(graph.id, graph.context)
    impl.data = {k: d for k, d in graph.data.items()}
    for nid in topo_sort(graph):
        node = graph.nodes[nid]
        if node.is_abstraction:
            impl.nodes[nid] = node
            impl.provenance[nid] = graph.provenance.get(nid, nid)
            continue
        entry = REGISTRY.get(node.kernel)
        if entry is None:
            raise UnknownKernel(f"unknown kernel {node.kernel!r}", [nid])
        io = {p.name: None for p in entry.signature.params}
        for i, o in node.bindings:
            io[entry.signature[i].name] = graph.data[o]
        entry.expand(io, node.attrs, Builder(impl, nid))
    impl.version += 1
    return impl
