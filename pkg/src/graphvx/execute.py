"""Reference execution engines: per-node interpretation and optimized plans."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Mapping

import numpy as np

from . import formats as F
from .cvlib import equalize_table
from .formats import DataKind, Desc, Format
from .graph import DataObject, Graph, topo_sort
from .ir import (
    Acc,
    Binary,
    Combine,
    Env,
    HistogramKernel,
    LocalKernel,
    PointKernel,
    ReduceKernel,
    ScaleKernel,
    ScanKernel,
    TableKernel,
    cast_value,
    eval_expr,
    input_refs,
    walk,
    window_offsets,
)
from .verify import VerifiedGraph, lower, require_stamped


class ExecutionError(Exception):
    pass


class MissingInput(ExecutionError):
    pass


class ShapeMismatch(ExecutionError):
    pass


@dataclass
class Counters:
    kernel_launches: int = 0
    pixels_read: int = 0
    pixels_written: int = 0
    transfers_executed: int = 0
    host_steps: int = 0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class ExecutionReport:
    outputs: dict  # data id -> ndarray
    counters: Counters
    labels: dict = field(default_factory=dict)  # data id -> name
    undefined_border: list = field(default_factory=list)  # data ids with zeroed border ring

    def by_name(self) -> dict:
        return {self.labels.get(k, str(k)): v for k, v in self.outputs.items()}


# -- buffers -----------------------------------------------------------------


def empty_buffer(desc: Desc) -> np.ndarray:
    return np.zeros(desc.shape(), dtype=desc.dtype())


def coerce(desc: Desc, value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.shape != desc.shape():
        raise ShapeMismatch(f"expected shape {desc.shape()} for {desc.kind} {desc.format}, got {arr.shape}")
    if arr.dtype != desc.dtype():
        if desc.dtype().kind in "iu" and arr.dtype.kind == "f":
            raise ShapeMismatch(f"expected {desc.dtype()} data, got {arr.dtype}")
        arr = arr.astype(desc.dtype())
    return arr


def _key_lookup(graph: Graph, inputs: Mapping) -> dict[int, object]:
    by_label = {d.label: d.id for d in graph.data.values()}
    out = {}
    for k, v in (inputs or {}).items():
        if isinstance(k, DataObject):
            k = k.id
        elif isinstance(k, str):
            if k not in by_label:
                raise MissingInput(f"no data object named {k!r}")
            k = by_label[k]
        out[int(k)] = v
    return out


def bind_inputs(graph: Graph, inputs: Mapping) -> dict[int, np.ndarray]:
    """Buffers for every non-virtual data object that no node produces but some node reads."""
    given = _key_lookup(graph, inputs)
    produced = graph.producers()
    consumed = graph.consumers()
    bufs = {}
    for oid in sorted(graph.data):
        d = graph.data[oid]
        if d.virtual or oid in produced or oid not in consumed:
            continue
        v = given.get(oid, d.value)
        if v is None:
            raise MissingInput(f"no value for input {d.label} (object {oid})")
        bufs[oid] = coerce(d.desc, v)
    return bufs


# -- kernel evaluation -------------------------------------------------------


def _npix(desc: Desc) -> int:
    if desc.kind == DataKind.IMAGE:
        return desc.width * desc.height
    return int(np.prod(desc.shape())) if desc.shape() else 1


def _store(val, desc: Desc) -> np.ndarray:
    arr = np.asarray(val)
    if desc.kind == DataKind.IMAGE:
        shape2 = (desc.height, desc.width)
        arr = np.broadcast_to(arr, shape2)
    # astype copies into C order and, unlike ascontiguousarray, keeps 0-d scalars 0-d
    return arr.astype(desc.dtype(), order="C")


def _pad(arr: np.ndarray, k: LocalKernel) -> np.ndarray:
    pw = [(k.ry, k.ry), (k.rx, k.rx)] + [(0, 0)] * (arr.ndim - 2)
    if k.boundary.mode == "constant":
        return np.pad(arr, pw, mode="constant", constant_values=k.boundary.value)
    return np.pad(arr, pw, mode="edge")


def _fold(op: Combine, acc, v):
    if op == Combine.SUM:
        return acc + v
    if op == Combine.MIN:
        return np.minimum(acc, v)
    return np.maximum(acc, v)


def eval_local(k: LocalKernel, vals: list, out: Desc) -> np.ndarray:
    h, w = out.height, out.width
    windowed = k.windowed_inputs()
    padded = {i: _pad(vals[i], k) for i in windowed}

    def window_fn(ox, oy):
        def f(i, dx, dy, ch):
            p = padded[i]
            y0, x0 = k.ry + oy + dy, k.rx + ox + dx
            a = p[y0:y0 + h, x0:x0 + w]
            return a[..., ch] if a.ndim == 3 else a

        return f

    def mask_fn(ox, oy):
        return lambda dx, dy: k.mask[k.ry + oy + dy][k.rx + ox + dx]

    with np.errstate(over="ignore", invalid="ignore"):
        if k.combine is None:
            acc = eval_expr(k.tap_body, Env(vals, window_fn(0, 0), mask_fn(0, 0)))
        else:
            acc = None
            for dx, dy in k.taps():
                v = eval_expr(k.tap_body, Env(vals, window_fn(dx, dy), mask_fn(dx, dy)))
                acc = v if acc is None else _fold(k.combine, acc, v)
        res = acc if k.post_body is None else eval_expr(k.post_body, Env(vals, acc=acc))
    res = _store(res, out)
    if k.boundary.mode == "undefined":
        if k.ry:
            res[:k.ry] = 0
            res[-k.ry:] = 0
        if k.rx:
            res[:, :k.rx] = 0
            res[:, -k.rx:] = 0
    return res


def eval_point(k: PointKernel, vals: list, out: Desc) -> np.ndarray:
    memo = {}
    chans = [eval_expr(b, Env(vals), memo) for b in k.bodies]
    if len(chans) == 1:
        return _store(chans[0], out)
    shape2 = (out.height, out.width)
    return np.ascontiguousarray(
        np.stack([np.broadcast_to(np.asarray(c), shape2) for c in chans], axis=-1).astype(out.dtype())
    )


def _split_fold(e):
    """(op, rest) when ``e`` is ``acc op rest`` with rest free of Acc."""
    if isinstance(e, Binary) and e.op in ("add", "min", "max"):
        for a, b in ((e.lhs, e.rhs), (e.rhs, e.lhs)):
            if isinstance(a, Acc) and not any(isinstance(x, Acc) for x in walk(b)):
                return e.op, b
    return None


def eval_reduce(k: ReduceKernel, vals: list, out: Desc):
    img = vals[0]
    if img.ndim != 2:
        raise ExecutionError("reductions need a single-channel image")
    flat = img.reshape(-1)
    pix = [flat] + list(vals[1:])
    init = np.float64(k.init) if isinstance(k.init, float) else np.int64(k.init)
    split = _split_fold(k.combine)
    with np.errstate(over="ignore", invalid="ignore"):
        if split is not None:
            op, rest = split
            terms = np.broadcast_to(np.asarray(eval_expr(rest, Env(pix))), flat.shape)
            if isinstance(init, np.floating) or terms.dtype.kind == "f":
                terms = terms.astype(np.float64)
                init = np.float64(init)
            if op == "add":
                if terms.dtype.kind == "f":
                    # sequential row-major order
                    acc = np.cumsum(np.concatenate([[init], terms]))[-1] if len(terms) else init
                else:
                    acc = init + terms.sum(dtype=np.int64)
            elif op == "min":
                acc = np.minimum(init, terms.min())
            else:
                acc = np.maximum(init, terms.max())
        else:
            acc = init
            for i in range(len(flat)):
                acc = eval_expr(k.combine, Env([flat[i]] + list(vals[1:]), acc=acc))
            terms = None
        if k.track_index:
            if terms is None:
                raise ExecutionError("index tracking needs an 'acc op value' combine")
            hits = np.flatnonzero(terms.reshape(-1) == acc)[: out.capacity]
            res = np.full((out.capacity, 2), -1, dtype=np.int32)
            res[: len(hits), 0] = hits % img.shape[1]
            res[: len(hits), 1] = hits // img.shape[1]
            return res
        if k.finalize is not None:
            acc = eval_expr(k.finalize, Env([np.int64(0)] + list(vals[1:]), acc=acc))
    return _store(acc, out)


def eval_histogram(k: HistogramKernel, vals: list, out: Desc) -> np.ndarray:
    img = vals[0].astype(np.int64)
    inside = (img >= k.offset) & (img < k.offset + k.range)
    with np.errstate(over="ignore"):
        b = np.broadcast_to(np.asarray(eval_expr(k.bin_of, Env([img]))), img.shape)
    b = b[inside & (b >= 0) & (b < k.bins)]
    return np.bincount(b.astype(np.int64), minlength=k.bins)[: k.bins].astype(np.int32)


def scale_coords(n_out: int, n_in: int, interp: str):
    x = np.arange(n_out)
    if interp == "nearest":
        return np.minimum(((2 * x + 1) * n_in) // (2 * n_out), n_in - 1)
    xf = (x + 0.5) * (n_in / n_out) - 0.5
    x0 = np.floor(xf)
    frac = xf - x0
    x0 = x0.astype(np.int64)
    return np.clip(x0, 0, n_in - 1), np.clip(x0 + 1, 0, n_in - 1), frac


def eval_scale(k: ScaleKernel, vals: list, out: Desc) -> np.ndarray:
    img = vals[0]
    h_in, w_in = img.shape[:2]
    if k.interp == "nearest":
        ys = scale_coords(out.height, h_in, "nearest")
        xs = scale_coords(out.width, w_in, "nearest")
        return np.ascontiguousarray(img[np.ix_(ys, xs)])
    y0, y1, fy = scale_coords(out.height, h_in, "bilinear")
    x0, x1, fx = scale_coords(out.width, w_in, "bilinear")
    p = img.astype(np.float64)
    fy = fy[:, None]
    fx = fx[None, :]
    top = p[np.ix_(y0, x0)] * (1.0 - fx) + p[np.ix_(y0, x1)] * fx
    bot = p[np.ix_(y1, x0)] * (1.0 - fx) + p[np.ix_(y1, x1)] * fx
    v = top * (1.0 - fy) + bot * fy
    return _store(cast_value(v, out.format), out)


def eval_scan(k: ScanKernel, vals: list, out: Desc) -> np.ndarray:
    s = np.cumsum(np.cumsum(vals[0].astype(np.int64), axis=0), axis=1)
    return _store(cast_value(s, Format.S32, "wrap"), out)


def eval_table(k: TableKernel, vals: list, out: Desc) -> np.ndarray:
    if k.fn != "equalize":
        raise ExecutionError(f"unknown table function {k.fn!r}")
    return equalize_table(vals[0])


_EVAL = {
    "point": eval_point,
    "local": eval_local,
    "reduce": eval_reduce,
    "histogram": eval_histogram,
    "scale": eval_scale,
    "scan": eval_scan,
    "table": eval_table,
}


def pixels_read(kernel, in_descs: list[Desc], out: Desc) -> int:
    """Exact number of input pixel reads one launch of ``kernel`` performs."""
    npix = out.width * out.height if out.kind == DataKind.IMAGE else 0
    if kernel.kind == "point":
        refs = set().union(*(input_refs(b) for b in kernel.bodies))
        return sum(npix for i in refs if in_descs[i].kind == DataKind.IMAGE)
    if kernel.kind == "local":
        total = 0
        win = kernel.windowed_inputs()
        centre = set()
        for e in (kernel.tap_body, kernel.post_body):
            if e is not None:
                centre |= {x.index for x in walk(e) if type(x).__name__ == "InputPixel"}
        for i in win:
            taps = len(kernel.taps()) if kernel.combine is not None else len(window_offsets(kernel.tap_body, i))
            total += npix * taps
        total += sum(npix for i in centre if in_descs[i].kind == DataKind.IMAGE)
        return total
    if kernel.kind == "table":
        return 0
    d = in_descs[0]
    return d.width * d.height


def run_kernel(kernel, vals: list, in_descs: list[Desc], out: Desc, counters: Counters | None = None):
    res = _EVAL[kernel.kind](kernel, vals, out)
    if counters is not None:
        if kernel.kind == "table":
            counters.host_steps += 1
        else:
            counters.kernel_launches += 1
        counters.pixels_read += pixels_read(kernel, in_descs, out)
        counters.pixels_written += _npix(out)
    return res


# -- engines -----------------------------------------------------------------


def _execute(graph: Graph, order: list[int], bufs: dict, counters: Counters, undefined: list):
    for nid in order:
        node = graph.nodes[nid]
        k = node.kernel
        in_ids = [oid for _, oid in sorted(node.inputs())]
        (oidx, oid), = node.outputs()
        out = graph.data[oid].desc
        vals = [bufs[i] for i in in_ids]
        bufs[oid] = run_kernel(k, vals, [graph.data[i].desc for i in in_ids], out, counters)
        if k.kind == "local" and k.boundary.mode == "undefined":
            undefined.append(oid)


def _outputs(graph: Graph, bufs: dict, keep=None) -> dict:
    produced = graph.producers()
    return {
        oid: bufs[oid]
        for oid in sorted(graph.data)
        if not graph.data[oid].virtual and oid in produced and oid in bufs and (keep is None or oid in keep)
    }


def run_naive(g, inputs: Mapping | None = None) -> ExecutionReport:
    """Interpret every node of the (lowered) graph in topological order."""
    vg = lower(require_stamped(g))
    graph = vg.graph
    bufs = bind_inputs(graph, inputs or {})
    counters = Counters()
    undefined: list = []
    _execute(graph, topo_sort(graph), bufs, counters, undefined)
    counters.transfers_executed = 2 * len(graph.nodes)
    labels = {oid: d.label for oid, d in graph.data.items()}
    return ExecutionReport(_outputs(graph, bufs), counters, labels, undefined)


def run_plan(plan, inputs: Mapping | None = None) -> ExecutionReport:
    """Execute an optimized plan (fused kernels over the alive subgraph)."""
    require_stamped(plan.verified)
    graph = plan.fused
    bufs = bind_inputs(graph, inputs or {})
    counters = Counters()
    undefined: list = []
    _execute(graph, plan.order, bufs, counters, undefined)
    counters.transfers_executed = len(plan.transfers.transfers)
    labels = {oid: d.label for oid, d in graph.data.items()}
    return ExecutionReport(_outputs(graph, bufs), counters, labels, undefined)


def random_inputs(graph, seed: int = 0) -> dict[int, np.ndarray]:
    """Uniform random buffers for every image input of ``graph``; scalars keep their values."""
    if isinstance(graph, VerifiedGraph):
        graph = graph.graph
    rng = np.random.default_rng(seed)
    produced = graph.producers()
    out = {}
    for oid in sorted(graph.data):
        d = graph.data[oid]
        if d.virtual or oid in produced or d.kind != DataKind.IMAGE:
            continue
        out[oid] = random_buffer(d.desc, rng)
    return out


def random_buffer(desc: Desc, rng: np.random.Generator) -> np.ndarray:
    shape, dt = desc.shape(), desc.dtype()
    if dt.kind == "f":
        return rng.uniform(-1000.0, 1000.0, size=shape).astype(dt)
    info = np.iinfo(dt)
    return rng.integers(info.min, int(info.max) + 1, size=shape, dtype=np.int64).astype(dt)
