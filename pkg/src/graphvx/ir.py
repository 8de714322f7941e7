"""Expression IR and the point/local/global abstraction kernels.

Kernel bodies are small typed expression trees.  Integer arithmetic runs in
a 64-bit domain and real arithmetic in double precision; results reach
storage formats only through explicit :class:`Cast` nodes.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .formats import (
    FLOATING,
    INT_RANGE,
    STORAGE,
    DataKind,
    Desc,
    Format,
    channels,
)


class KernelTypeError(Exception):
    code = "TypeMismatch"


class TypeMismatch(KernelTypeError):
    code = "TypeMismatch"


class MissingCast(KernelTypeError):
    code = "MissingCast"


class OffsetOutOfWindow(KernelTypeError):
    code = "OffsetOutOfWindow"


class StaticDivByZero(KernelTypeError):
    code = "DivByZero"


class DivByZero(ArithmeticError):
    """Raised at evaluation time when a divisor evaluates to zero."""


# --------------------------------------------------------------------------
# expressions


class Expr:
    __slots__ = ()

    def __add__(self, o):
        return Binary("add", self, lift(o))

    def __radd__(self, o):
        return Binary("add", lift(o), self)

    def __sub__(self, o):
        return Binary("sub", self, lift(o))

    def __rsub__(self, o):
        return Binary("sub", lift(o), self)

    def __mul__(self, o):
        return Binary("mul", self, lift(o))

    def __rmul__(self, o):
        return Binary("mul", lift(o), self)

    def __truediv__(self, o):
        return Binary("div", self, lift(o))

    def __neg__(self):
        return Unary("neg", self)

    def children(self) -> tuple["Expr", ...]:
        return ()


@dataclass(frozen=True)
class ConstI(Expr):
    value: int


@dataclass(frozen=True)
class ConstF(Expr):
    value: float


@dataclass(frozen=True)
class InputPixel(Expr):
    """Value of input ``index`` at the output coordinate (scalars broadcast)."""

    index: int
    channel: int = 0


@dataclass(frozen=True)
class WindowPixel(Expr):
    index: int
    dx: int
    dy: int
    channel: int = 0


@dataclass(frozen=True)
class MaskCoef(Expr):
    dx: int
    dy: int


@dataclass(frozen=True)
class Acc(Expr):
    """Accumulated value: combined taps of a local kernel, or a reduction accumulator."""


@dataclass(frozen=True)
class Lookup(Expr):
    """Element of table input ``index`` at position ``operand`` (clamped)."""

    index: int
    operand: Expr

    def children(self):
        return (self.operand,)


BINARY_OPS = (
    "add", "sub", "mul", "div", "min", "max", "and", "or", "xor",
    "shl", "shr", "lt", "gt", "eq", "atan2",
)
UNARY_OPS = ("not", "neg", "abs", "sqrt")


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    lhs: Expr
    rhs: Expr

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary op {self.op!r}")

    def children(self):
        return (self.lhs, self.rhs)


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    operand: Expr

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary op {self.op!r}")

    def children(self):
        return (self.operand,)


@dataclass(frozen=True)
class Select(Expr):
    cond: Expr
    a: Expr
    b: Expr

    def children(self):
        return (self.cond, self.a, self.b)


@dataclass(frozen=True)
class Cast(Expr):
    target: Format
    policy: str  # "saturate" | "wrap"
    operand: Expr

    def __post_init__(self):
        object.__setattr__(self, "target", Format(self.target))
        if self.policy not in ("saturate", "wrap"):
            raise ValueError(f"unknown cast policy {self.policy!r}")

    def children(self):
        return (self.operand,)


def lift(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (bool, np.bool_)):
        return ConstI(int(v))
    if isinstance(v, (int, np.integer)):
        return ConstI(int(v))
    if isinstance(v, (float, np.floating)):
        return ConstF(float(v))
    raise TypeError(f"cannot lift {v!r} into an expression")


def bin_(op, a, b) -> Binary:
    return Binary(op, lift(a), lift(b))


def cast(target, e, policy="saturate") -> Cast:
    return Cast(Format(target), policy, lift(e))


def walk(e: Expr):
    """Pre-order traversal (shared subtrees are visited once)."""
    seen = set()
    stack = [e]
    while stack:
        x = stack.pop()
        if id(x) in seen:
            continue
        seen.add(id(x))
        yield x
        stack.extend(reversed(x.children()))


def rebuild(e: Expr, fn: Callable[[Expr], Expr | None], _memo=None) -> Expr:
    """Bottom-up rewrite.  ``fn`` returns a replacement or None to keep the node."""
    memo = {} if _memo is None else _memo
    key = id(e)
    if key in memo:
        return memo[key]
    r = fn(e)
    if r is None:
        if isinstance(e, Binary):
            r = Binary(e.op, rebuild(e.lhs, fn, memo), rebuild(e.rhs, fn, memo))
        elif isinstance(e, Unary):
            r = Unary(e.op, rebuild(e.operand, fn, memo))
        elif isinstance(e, Select):
            r = Select(rebuild(e.cond, fn, memo), rebuild(e.a, fn, memo), rebuild(e.b, fn, memo))
        elif isinstance(e, Cast):
            r = Cast(e.target, e.policy, rebuild(e.operand, fn, memo))
        elif isinstance(e, Lookup):
            r = Lookup(e.index, rebuild(e.operand, fn, memo))
        else:
            r = e
    memo[key] = r
    return r


def input_refs(e: Expr) -> set[int]:
    refs = set()
    for x in walk(e):
        if isinstance(x, (InputPixel, WindowPixel, Lookup)):
            refs.add(x.index)
    return refs


def window_refs(e: Expr) -> set[int]:
    return {x.index for x in walk(e) if isinstance(x, WindowPixel)}


def window_offsets(e: Expr, index: int) -> set[tuple[int, int]]:
    return {(x.dx, x.dy) for x in walk(e) if isinstance(x, WindowPixel) and x.index == index}


# --------------------------------------------------------------------------
# kernels


class Direction(str, Enum):
    INPUT = "INPUT"
    OUTPUT = "OUTPUT"


class State(str, Enum):
    REQUIRED = "REQUIRED"
    OPTIONAL = "OPTIONAL"


@dataclass(frozen=True)
class Param:
    name: str
    direction: Direction
    kind: DataKind | None = DataKind.IMAGE  # None accepts any kind
    formats: frozenset | None = None  # None accepts any format
    state: State = State.REQUIRED

    @property
    def required(self) -> bool:
        return self.state == State.REQUIRED


@dataclass(frozen=True)
class KernelSignature:
    params: tuple[Param, ...]

    def __post_init__(self):
        if not any(p.direction == Direction.OUTPUT for p in self.params):
            raise ValueError("a kernel signature needs at least one OUTPUT parameter")

    def __len__(self):
        return len(self.params)

    def __getitem__(self, i) -> Param:
        return self.params[i]

    def index(self, name: str) -> int:
        for i, p in enumerate(self.params):
            if p.name == name:
                return i
        raise KeyError(name)

    @property
    def inputs(self) -> list[int]:
        return [i for i, p in enumerate(self.params) if p.direction == Direction.INPUT]

    @property
    def outputs(self) -> list[int]:
        return [i for i, p in enumerate(self.params) if p.direction == Direction.OUTPUT]


@dataclass(frozen=True)
class Boundary:
    mode: str = "clamp"  # clamp | constant | undefined
    value: int = 0

    def __post_init__(self):
        if self.mode not in ("clamp", "constant", "undefined"):
            raise ValueError(f"unknown boundary mode {self.mode!r}")

    @classmethod
    def parse(cls, s: str | None) -> "Boundary":
        if not s:
            return cls()
        if s.startswith("constant"):
            _, _, v = s.partition(":")
            return cls("constant", int(v or 0))
        return cls(s)

    def __str__(self):
        return f"constant:{self.value}" if self.mode == "constant" else self.mode


CLAMP = Boundary()


class Combine(str, Enum):
    SUM = "sum"
    MIN = "min"
    MAX = "max"


GLOBAL_KINDS = frozenset({"reduce", "histogram", "scale", "scan", "table"})


class AbstractionKernel:
    kind: str = ""
    name: str
    arity: int

    @property
    def is_global(self) -> bool:
        return self.kind in GLOBAL_KINDS

    def input_kinds(self) -> tuple:
        return (None,) * self.arity

    def signature(self) -> KernelSignature:
        ps = [Param(f"in{i}", Direction.INPUT, k) for i, k in enumerate(self.input_kinds())]
        ps.append(Param("out", Direction.OUTPUT, None))
        return KernelSignature(tuple(ps))


@dataclass(frozen=True)
class PointKernel(AbstractionKernel):
    name: str
    arity: int
    bodies: tuple  # one Expr per output channel
    kind = "point"

    def __post_init__(self):
        if isinstance(self.bodies, Expr):
            object.__setattr__(self, "bodies", (self.bodies,))
        else:
            object.__setattr__(self, "bodies", tuple(self.bodies))

    @property
    def body(self) -> Expr:
        return self.bodies[0]


@dataclass(frozen=True)
class LocalKernel(AbstractionKernel):
    """Window operator.

    With ``combine`` set, ``tap_body`` is evaluated once per window tap in
    row-major order and the results are folded; inside it ``WindowPixel``
    and ``MaskCoef`` offsets are relative to the current tap and must be 0.
    With ``combine=None`` the body is evaluated once and its offsets address
    the window directly.  ``post_body`` sees the folded value as ``Acc`` and
    other inputs at the centre pixel through ``InputPixel``.
    """

    name: str
    arity: int
    window_w: int
    window_h: int
    tap_body: Expr
    combine: Combine | None = Combine.SUM
    post_body: Expr | None = None
    boundary: Boundary = CLAMP
    mask: tuple | None = None
    kind = "local"

    def __post_init__(self):
        if self.combine is not None:
            object.__setattr__(self, "combine", Combine(self.combine))
        if self.mask is not None:
            object.__setattr__(self, "mask", tuple(tuple(r) for r in self.mask))

    @property
    def rx(self) -> int:
        return self.window_w // 2

    @property
    def ry(self) -> int:
        return self.window_h // 2

    def taps(self) -> list[tuple[int, int]]:
        return [(dx, dy) for dy in range(-self.ry, self.ry + 1) for dx in range(-self.rx, self.rx + 1)]

    def windowed_inputs(self) -> set[int]:
        return window_refs(self.tap_body)


@dataclass(frozen=True)
class ReduceKernel(AbstractionKernel):
    """Row-major fold of ``combine`` over the pixels of input 0.

    Extra inputs must be scalars.  With ``track_index`` the output lists the
    coordinates of pixels equal to the folded value (index-tracking variant).
    """

    name: str
    init: int | float
    combine: Expr
    finalize: Expr | None = None
    extra: int = 0
    track_index: bool = False
    capacity: int = 0
    kind = "reduce"

    @property
    def arity(self):
        return 1 + self.extra

    def input_kinds(self):
        return (DataKind.IMAGE,) + (DataKind.SCALAR,) * self.extra


@dataclass(frozen=True)
class HistogramKernel(AbstractionKernel):
    name: str
    bins: int
    offset: int
    range: int
    bin_of: Expr
    kind = "histogram"
    arity = 1

    def input_kinds(self):
        return (DataKind.IMAGE,)


@dataclass(frozen=True)
class ScaleKernel(AbstractionKernel):
    name: str
    interp: str = "nearest"  # nearest | bilinear
    kind = "scale"
    arity = 1

    def input_kinds(self):
        return (DataKind.IMAGE,)


@dataclass(frozen=True)
class ScanKernel(AbstractionKernel):
    """Integral image: running sum in row-major order."""

    name: str
    kind = "scan"
    arity = 1

    def input_kinds(self):
        return (DataKind.IMAGE,)


@dataclass(frozen=True)
class TableKernel(AbstractionKernel):
    """Host-side table computation on a distribution (equalization CDF)."""

    name: str
    fn: str = "equalize"
    kind = "table"
    arity = 1

    def input_kinds(self):
        return (DataKind.DISTRIBUTION,)


# --------------------------------------------------------------------------
# typing


def _promote(a: Format, b: Format) -> Format:
    if a in FLOATING or b in FLOATING:
        return Format.F64
    return Format.I64


def _elem_format(fmt: Format, channel: int) -> Format:
    n = channels(fmt)
    if channel < 0 or channel >= n:
        raise TypeMismatch(f"channel {channel} out of range for {fmt}")
    if n > 1:
        return Format.U8
    return fmt


@dataclass
class _TypeCtx:
    formats: Sequence[Format]
    local: LocalKernel | None = None
    relative: bool = False
    acc: Format | None = None
    allow_window: bool = False


def expr_type(e: Expr, ctx: _TypeCtx, _memo=None) -> Format:
    memo = {} if _memo is None else _memo
    if id(e) in memo:
        return memo[id(e)]
    t = _expr_type(e, ctx, memo)
    memo[id(e)] = t
    return t


def _input_fmt(ctx, index) -> Format:
    if index < 0 or index >= len(ctx.formats):
        raise TypeMismatch(f"input {index} does not exist (arity {len(ctx.formats)})")
    return Format(ctx.formats[index])


def _check_offset(ctx, dx, dy):
    k = ctx.local
    if ctx.relative:
        if dx != 0 or dy != 0:
            raise OffsetOutOfWindow(f"offset ({dx},{dy}) leaves the {k.window_w}x{k.window_h} window")
    elif abs(dx) > k.rx or abs(dy) > k.ry:
        raise OffsetOutOfWindow(f"offset ({dx},{dy}) outside {k.window_w}x{k.window_h} window")


def _expr_type(e, ctx, memo) -> Format:
    if isinstance(e, ConstI):
        return Format.I64
    if isinstance(e, ConstF):
        return Format.F64
    if isinstance(e, InputPixel):
        return _elem_format(_input_fmt(ctx, e.index), e.channel)
    if isinstance(e, WindowPixel):
        if ctx.local is None or not ctx.allow_window:
            raise TypeMismatch("WindowPixel outside a local kernel tap body")
        _check_offset(ctx, e.dx, e.dy)
        return _elem_format(_input_fmt(ctx, e.index), e.channel)
    if isinstance(e, MaskCoef):
        if ctx.local is None or not ctx.allow_window:
            raise TypeMismatch("MaskCoef outside a local kernel tap body")
        if ctx.local.mask is None:
            raise TypeMismatch("MaskCoef used but kernel has no mask")
        _check_offset(ctx, e.dx, e.dy)
        vals = [v for row in ctx.local.mask for v in row]
        return Format.F64 if any(isinstance(v, float) for v in vals) else Format.I64
    if isinstance(e, Acc):
        if ctx.acc is None:
            raise TypeMismatch("Acc used where no accumulator exists")
        return ctx.acc
    if isinstance(e, Lookup):
        it = expr_type(e.operand, ctx, memo)
        if it in FLOATING:
            raise TypeMismatch("table index must be integer")
        return _input_fmt(ctx, e.index)
    if isinstance(e, Binary):
        a = expr_type(e.lhs, ctx, memo)
        b = expr_type(e.rhs, ctx, memo)
        if e.op in ("and", "or", "xor", "shl", "shr"):
            if a in FLOATING or b in FLOATING:
                raise TypeMismatch(f"{e.op} requires integer operands")
            return Format.I64
        if e.op in ("lt", "gt", "eq"):
            return Format.I64
        if e.op == "atan2":
            return Format.F64
        if e.op == "div" and isinstance(e.rhs, (ConstI, ConstF)) and e.rhs.value == 0:
            raise StaticDivByZero("division by constant zero")
        if e.op in ("min", "max") and a == b:
            return a
        return _promote(a, b)
    if isinstance(e, Unary):
        a = expr_type(e.operand, ctx, memo)
        if e.op == "not":
            if a in FLOATING:
                raise TypeMismatch("not requires an integer operand")
            return Format.I64
        if e.op == "sqrt":
            return Format.F64
        return _promote(a, a)
    if isinstance(e, Select):
        c = expr_type(e.cond, ctx, memo)
        if c in FLOATING:
            raise TypeMismatch("select condition must be integer")
        a = expr_type(e.a, ctx, memo)
        b = expr_type(e.b, ctx, memo)
        return a if a == b else _promote(a, b)
    if isinstance(e, Cast):
        expr_type(e.operand, ctx, memo)
        if e.target not in STORAGE and e.target not in (Format.I64, Format.F64):
            raise TypeMismatch(f"cannot cast to {e.target}")
        return e.target
    raise TypeMismatch(f"unknown expression node {type(e).__name__}")


def _storage(t: Format, what: str) -> Format:
    if t not in STORAGE:
        raise MissingCast(f"{what} has internal type {t}; add a Cast to a storage format")
    return t


def _fmt_of(x) -> Format:
    return x.format if isinstance(x, Desc) else Format(x)


def typecheck(kernel: AbstractionKernel, formats: Sequence, declared: Format | None = None) -> Format:
    """Infer the output element format of ``kernel`` for the given input formats.

    ``formats`` holds one Format (or Desc) per input.  Raises a
    :class:`KernelTypeError` subclass on ill-typed bodies.
    """
    fmts = [_fmt_of(f) for f in formats]
    if len(fmts) != kernel.arity:
        raise TypeMismatch(f"{kernel.name}: expected {kernel.arity} inputs, got {len(fmts)}")
    for f in fmts:
        if f == Format.UNRESOLVED:
            raise TypeMismatch("input format unresolved")
    if isinstance(kernel, PointKernel):
        ctx = _TypeCtx(fmts)
        ts = [_storage(expr_type(b, ctx), f"{kernel.name} body") for b in kernel.bodies]
        if len(ts) == 1:
            out = ts[0]
        elif len(ts) == 3 and all(t == Format.U8 for t in ts):
            out = Format.RGB
        elif len(ts) == 2 and all(t == Format.U8 for t in ts):
            out = Format.UYVY
        else:
            raise TypeMismatch(f"{kernel.name}: unsupported multi-channel output {ts}")
    elif isinstance(kernel, LocalKernel):
        if kernel.window_w % 2 == 0 or kernel.window_h % 2 == 0 or kernel.window_w < 1 or kernel.window_h < 1:
            raise TypeMismatch("local window dimensions must be odd")
        if kernel.mask is not None and (
            len(kernel.mask) != kernel.window_h or any(len(r) != kernel.window_w for r in kernel.mask)
        ):
            raise TypeMismatch("mask shape does not match window")
        ctx = _TypeCtx(fmts, local=kernel, relative=kernel.combine is not None, allow_window=True)
        t = expr_type(kernel.tap_body, ctx)
        if not kernel.windowed_inputs():
            raise TypeMismatch(f"{kernel.name}: local body reads no window")
        if kernel.combine == Combine.SUM:
            t = _promote(t, t)
        if kernel.post_body is not None:
            t = expr_type(kernel.post_body, _TypeCtx(fmts, acc=t))
        out = _storage(t, f"{kernel.name} body")
    elif isinstance(kernel, ReduceKernel):
        acc = Format.F64 if isinstance(kernel.init, float) else Format.I64
        t = expr_type(kernel.combine, _TypeCtx(fmts, acc=acc))
        if t in FLOATING and acc not in FLOATING:
            raise TypeMismatch("reduction combine changes accumulator type; use a real init")
        if kernel.track_index:
            return Format.COORD
        if kernel.finalize is not None:
            t = expr_type(kernel.finalize, _TypeCtx(fmts, acc=acc))
        out = _storage(t, f"{kernel.name} result")
    elif isinstance(kernel, HistogramKernel):
        if kernel.bins < 1 or kernel.range < 1:
            raise TypeMismatch("histogram needs bins >= 1 and range >= 1")
        if fmts[0] in FLOATING or channels(fmts[0]) != 1:
            raise TypeMismatch("histogram input must be single-channel integer")
        if expr_type(kernel.bin_of, _TypeCtx(fmts)) in FLOATING:
            raise TypeMismatch("bin_of must be integer valued")
        out = Format.S32
    elif isinstance(kernel, ScaleKernel):
        if fmts[0] not in STORAGE:
            raise TypeMismatch("scale input must be single-channel")
        out = fmts[0]
    elif isinstance(kernel, ScanKernel):
        if fmts[0] not in (Format.U8, Format.U16):
            raise TypeMismatch("integral image input must be U8 or U16")
        out = Format.S32
    elif isinstance(kernel, TableKernel):
        out = Format.U8
    else:
        raise TypeMismatch(f"unknown kernel type {type(kernel).__name__}")
    if declared is not None and Format(declared) != out:
        raise MissingCast(f"{kernel.name}: body yields {out}, declared output is {declared}")
    return out


def infer(kernel: AbstractionKernel, inputs: Sequence[Desc], declared: Desc | None = None) -> Desc:
    """Output descriptor of ``kernel`` applied to inputs with descriptors ``inputs``."""
    fmt = typecheck(kernel, inputs)
    images = [d for d in inputs if d.kind == DataKind.IMAGE]
    dims = {(d.width, d.height) for d in images}
    if len(dims) > 1 and kernel.kind in ("point", "local"):
        raise TypeMismatch(f"{kernel.name}: image inputs differ in size {sorted(dims)}")
    if isinstance(kernel, PointKernel):
        if not images:
            return Desc(DataKind.SCALAR, fmt)
        w, h = dims.pop()
        return Desc(DataKind.IMAGE, fmt, width=w, height=h)
    if isinstance(kernel, LocalKernel):
        for i in kernel.windowed_inputs():
            if inputs[i].kind != DataKind.IMAGE:
                raise TypeMismatch(f"{kernel.name}: windowed input {i} is not an image")
        w, h = dims.pop()
        return Desc(DataKind.IMAGE, fmt, width=w, height=h)
    if isinstance(kernel, ReduceKernel):
        if inputs[0].kind != DataKind.IMAGE:
            raise TypeMismatch("reduction input must be an image")
        if kernel.track_index:
            return Desc(DataKind.ARRAY, Format.COORD, capacity=kernel.capacity)
        return Desc(DataKind.SCALAR, fmt)
    if isinstance(kernel, HistogramKernel):
        return Desc(DataKind.DISTRIBUTION, Format.S32, bins=kernel.bins, offset=kernel.offset, range=kernel.range)
    if isinstance(kernel, ScaleKernel):
        if declared is None or declared.width < 1 or declared.height < 1:
            raise MissingDims("scale output needs explicit dimensions")
        return Desc(DataKind.IMAGE, fmt, width=declared.width, height=declared.height)
    if isinstance(kernel, ScanKernel):
        d = inputs[0]
        return Desc(DataKind.IMAGE, fmt, width=d.width, height=d.height)
    if isinstance(kernel, TableKernel):
        if inputs[0].kind != DataKind.DISTRIBUTION or inputs[0].bins != 256:
            raise TypeMismatch("equalization table needs a 256-bin distribution")
        return Desc(DataKind.ARRAY, Format.U8, capacity=256)
    raise TypeMismatch(f"unknown kernel type {type(kernel).__name__}")


class MissingDims(KernelTypeError):
    code = "UnresolvedVirtualFormat"


# --------------------------------------------------------------------------
# evaluation


def _internal(v):
    """Convert a stored value (array or scalar) into the internal domain."""
    if isinstance(v, np.ndarray):
        if v.dtype.kind == "f":
            return v.astype(np.float64)
        if v.dtype.kind == "b":
            return v.astype(np.int64)
        return v.astype(np.int64)
    if isinstance(v, (bool, np.bool_)):
        return np.int64(v)
    if isinstance(v, (int, np.integer)):
        return np.int64(v)
    if isinstance(v, (float, np.floating)):
        return np.float64(v)
    raise TypeError(f"unsupported value {v!r}")


def _is_floaty(v) -> bool:
    return np.asarray(v).dtype.kind == "f"


def _bool(x):
    r = np.asarray(x).astype(np.int64)
    return r[()] if r.ndim == 0 else r


def round_half_away(x):
    """Round to nearest, ties away from zero (mirrors the emitted C helper)."""
    x = np.asarray(x, dtype=np.float64)
    t = np.trunc(x)
    # x - t is exact; floor(x + 0.5) would round 0.49999999999999994 up
    with np.errstate(invalid="ignore"):
        r = np.where(np.abs(x - t) >= 0.5, t + np.sign(x), t)
    return r[()] if r.ndim == 0 else r


def cast_value(v, target: Format, policy: str = "saturate"):
    """Apply a saturating or wrapping conversion to ``target``."""
    target = Format(target)
    if target == Format.F64:
        return np.asarray(v, dtype=np.float64)[()]
    if target == Format.F32:
        return np.asarray(v, dtype=np.float32).astype(np.float64)[()]
    lo, hi = INT_RANGE[target]
    if _is_floaty(v):
        f = np.asarray(v, dtype=np.float64)
        f = np.where(np.isnan(f), 0.0, f)
        f = round_half_away(f)
        if policy == "saturate" or target == Format.I64:
            f = np.clip(f, float(lo), float(hi))
            # float(hi) for I64 rounds up to 2**63
            iv = np.where(f >= 9.2e18, np.int64(hi), np.where(f <= -9.2e18, np.int64(lo), f.astype(np.int64)))
            r = np.asarray(iv, dtype=np.int64)
            return r[()] if r.ndim == 0 else r
        f = np.clip(f, -9.2e18, 9.2e18)
        v = np.asarray(f).astype(np.int64)
    iv = np.asarray(v, dtype=np.int64)
    if policy == "saturate":
        r = np.clip(iv, lo, hi)
    else:
        span = hi - lo + 1
        with np.errstate(over="ignore"):
            r = ((iv - lo) & (span - 1)) + lo if target != Format.I64 else iv
    r = np.asarray(r, dtype=np.int64)
    return r[()] if r.ndim == 0 else r


class Env:
    """Evaluation environment for :func:`eval_expr`.

    ``pixels[i]`` is the value of input ``i`` at the current coordinate
    (a scalar, an array of pixels, a channel tuple, or an (..., C) array).
    ``window(i, dx, dy, ch)`` and ``mask(dx, dy)`` serve local kernels.
    """

    def __init__(self, pixels=(), window=None, mask=None, acc=None, tables=None):
        self.pixels = list(pixels)
        self.window = window
        self.mask = mask
        self.acc = acc
        self.tables = tables or {}

    def pixel(self, index, channel):
        v = self.pixels[index]
        if isinstance(v, (tuple, list)):
            return v[channel]
        if isinstance(v, np.ndarray) and v.ndim == 3:
            return v[..., channel]
        if channel:
            raise TypeMismatch(f"input {index} has no channel {channel}")
        return v


def eval_expr(e: Expr, env: Env, _memo=None):
    """Evaluate ``e``.  Integer values come back as int64, reals as float64."""
    memo = {} if _memo is None else _memo
    with np.errstate(over="ignore", invalid="ignore"):
        return _eval(e, env, memo)


def _eval(e, env, memo):
    key = id(e)
    if key in memo:
        return memo[key]
    r = _eval1(e, env, memo)
    memo[key] = r
    return r


def _eval1(e, env, memo):
    if isinstance(e, ConstI):
        return np.int64(e.value)
    if isinstance(e, ConstF):
        return np.float64(e.value)
    if isinstance(e, InputPixel):
        return _internal(env.pixel(e.index, e.channel))
    if isinstance(e, WindowPixel):
        return _internal(env.window(e.index, e.dx, e.dy, e.channel))
    if isinstance(e, MaskCoef):
        return _internal(env.mask(e.dx, e.dy))
    if isinstance(e, Acc):
        return env.acc
    if isinstance(e, Lookup):
        table = env.tables.get(e.index)
        if table is None:
            table = env.pixels[e.index]
        table = np.asarray(table)
        idx = np.clip(_eval(e.operand, env, memo), 0, len(table) - 1)
        return _internal(table[idx])
    if isinstance(e, Binary):
        a = _eval(e.lhs, env, memo)
        b = _eval(e.rhs, env, memo)
        return _binary(e.op, a, b)
    if isinstance(e, Unary):
        a = _eval(e.operand, env, memo)
        if e.op == "not":
            return np.invert(a)
        if e.op == "neg":
            return np.negative(a)
        if e.op == "abs":
            return np.abs(a)
        return np.sqrt(np.asarray(a, dtype=np.float64))[()]
    if isinstance(e, Select):
        c = _eval(e.cond, env, memo)
        a = _eval(e.a, env, memo)
        b = _eval(e.b, env, memo)
        r = np.where(np.asarray(c) != 0, a, b)
        return r[()] if r.ndim == 0 else r
    if isinstance(e, Cast):
        return cast_value(_eval(e.operand, env, memo), e.target, e.policy)
    raise TypeError(f"cannot evaluate {type(e).__name__}")


def _binary(op, a, b):
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if np.any(np.asarray(b) == 0):
            raise DivByZero("division by zero")
        if _is_floaty(a) or _is_floaty(b):
            return np.asarray(a, dtype=np.float64) / b
        q = np.abs(a) // np.abs(b)
        r = np.where((np.asarray(a) < 0) != (np.asarray(b) < 0), -q, q)
        return r[()] if r.ndim == 0 else r
    if op == "min":
        return np.minimum(a, b)
    if op == "max":
        return np.maximum(a, b)
    if op == "and":
        return np.bitwise_and(a, b)
    if op == "or":
        return np.bitwise_or(a, b)
    if op == "xor":
        return np.bitwise_xor(a, b)
    if op == "shl":
        return np.left_shift(a, b)
    if op == "shr":
        return np.right_shift(a, b)
    if op == "lt":
        return _bool(a < b)
    if op == "gt":
        return _bool(a > b)
    if op == "eq":
        return _bool(a == b)
    if op == "atan2":
        r = np.arctan2(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
        return r[()] if r.ndim == 0 else r
    raise ValueError(op)


# --------------------------------------------------------------------------
# serialization


def expr_to_json(e: Expr):
    if isinstance(e, ConstI):
        return int(e.value)
    if isinstance(e, ConstF):
        return float(e.value)
    if isinstance(e, InputPixel):
        return ["in", e.index, e.channel]
    if isinstance(e, WindowPixel):
        return ["win", e.index, e.dx, e.dy, e.channel]
    if isinstance(e, MaskCoef):
        return ["mask", e.dx, e.dy]
    if isinstance(e, Acc):
        return ["acc"]
    if isinstance(e, Lookup):
        return ["lookup", e.index, expr_to_json(e.operand)]
    if isinstance(e, Binary):
        return [e.op, expr_to_json(e.lhs), expr_to_json(e.rhs)]
    if isinstance(e, Unary):
        return [e.op, expr_to_json(e.operand)]
    if isinstance(e, Select):
        return ["select", expr_to_json(e.cond), expr_to_json(e.a), expr_to_json(e.b)]
    if isinstance(e, Cast):
        return ["cast", e.target.value, e.policy, expr_to_json(e.operand)]
    raise TypeError(type(e).__name__)


class ExprSyntaxError(ValueError):
    pass


def expr_from_json(j) -> Expr:
    if isinstance(j, bool):
        raise ExprSyntaxError("booleans are not expressions")
    if isinstance(j, int):
        return ConstI(j)
    if isinstance(j, float):
        return ConstF(j)
    if not isinstance(j, list) or not j or not isinstance(j[0], str):
        raise ExprSyntaxError(f"malformed expression {j!r}")
    tag, args = j[0], j[1:]
    try:
        if tag == "in":
            return InputPixel(int(args[0]), int(args[1]) if len(args) > 1 else 0)
        if tag == "win":
            return WindowPixel(int(args[0]), int(args[1]), int(args[2]), int(args[3]) if len(args) > 3 else 0)
        if tag == "mask":
            return MaskCoef(int(args[0]), int(args[1]))
        if tag == "acc":
            return Acc()
        if tag == "lookup":
            return Lookup(int(args[0]), expr_from_json(args[1]))
        if tag == "select":
            return Select(*(expr_from_json(a) for a in args))
        if tag == "cast":
            return Cast(Format(args[0]), args[1], expr_from_json(args[2]))
        if tag in BINARY_OPS:
            (a, b) = args
            return Binary(tag, expr_from_json(a), expr_from_json(b))
        if tag in UNARY_OPS:
            (a,) = args
            return Unary(tag, expr_from_json(a))
    except (IndexError, ValueError, TypeError) as exc:
        raise ExprSyntaxError(f"malformed {tag!r} expression: {exc}") from exc
    raise ExprSyntaxError(f"unknown expression tag {tag!r}")


def _num(v):
    return float(v) if isinstance(v, float) else int(v)


def kernel_to_json(k: AbstractionKernel) -> dict:
    out: dict[str, Any] = {"name": k.name, "kind": k.kind}
    if isinstance(k, PointKernel):
        out["arity"] = k.arity
        if len(k.bodies) > 1:
            out["bodies"] = [expr_to_json(b) for b in k.bodies]
        else:
            out["body"] = expr_to_json(k.body)
    elif isinstance(k, LocalKernel):
        out.update(
            arity=k.arity,
            window=[k.window_w, k.window_h],
            boundary=str(k.boundary),
            combine=k.combine.value if k.combine else None,
            body=expr_to_json(k.tap_body),
        )
        if k.post_body is not None:
            out["post_body"] = expr_to_json(k.post_body)
        if k.mask is not None:
            out["mask"] = [[_num(v) for v in row] for row in k.mask]
    elif isinstance(k, ReduceKernel):
        out.update(init=_num(k.init), combine=expr_to_json(k.combine), extra=k.extra)
        if k.finalize is not None:
            out["finalize"] = expr_to_json(k.finalize)
        if k.track_index:
            out.update(track_index=True, capacity=k.capacity)
    elif isinstance(k, HistogramKernel):
        out.update(bins=k.bins, offset=k.offset, range=k.range, bin_of=expr_to_json(k.bin_of))
    elif isinstance(k, ScaleKernel):
        out["interp"] = k.interp
    elif isinstance(k, TableKernel):
        out["fn"] = k.fn
    return out


def kernel_from_json(j: Mapping) -> AbstractionKernel:
    kind = j.get("kind")
    name = j["name"]
    if kind == "point":
        if "bodies" in j:
            bodies = tuple(expr_from_json(b) for b in j["bodies"])
        else:
            bodies = (expr_from_json(j["body"]),)
        arity = j.get("arity")
        if arity is None:
            arity = 1 + max(max(input_refs(b), default=-1) for b in bodies)
        return PointKernel(name, int(arity), bodies)
    if kind == "local":
        w, h = j.get("window", [3, 3])
        body = expr_from_json(j["body"])
        post = expr_from_json(j["post_body"]) if "post_body" in j else None
        arity = j.get("arity")
        if arity is None:
            refs = input_refs(body) | (input_refs(post) if post is not None else set())
            arity = 1 + max(refs, default=0)
        combine = j.get("combine", "sum")
        return LocalKernel(
            name, int(arity), int(w), int(h), body,
            combine=Combine(combine) if combine else None,
            post_body=post,
            boundary=Boundary.parse(j.get("boundary")),
            mask=j.get("mask"),
        )
    if kind == "reduce":
        return ReduceKernel(
            name, j["init"], expr_from_json(j["combine"]),
            expr_from_json(j["finalize"]) if "finalize" in j else None,
            extra=int(j.get("extra", 0)),
            track_index=bool(j.get("track_index", False)),
            capacity=int(j.get("capacity", 0)),
        )
    if kind == "histogram":
        return HistogramKernel(name, int(j["bins"]), int(j["offset"]), int(j["range"]), expr_from_json(j["bin_of"]))
    if kind == "scale":
        return ScaleKernel(name, j.get("interp", "nearest"))
    if kind == "scan":
        return ScanKernel(name)
    if kind == "table":
        return TableKernel(name, j.get("fn", "equalize"))
    raise ExprSyntaxError(f"unknown kernel kind {kind!r}")
