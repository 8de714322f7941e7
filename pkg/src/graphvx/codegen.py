"""Artifact emitters: DOT graphs, portable C kernel source, streaming plans."""
from __future__ import annotations

import ctypes
import json
import math
import os
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import formats as F
from .formats import DataKind, Desc, Format
from .graph import DataObject, Graph, topo_sort
from .ir import (
    Acc,
    Binary,
    Cast,
    ConstF,
    ConstI,
    InputPixel,
    LocalKernel,
    Lookup,
    MaskCoef,
    PointKernel,
    Select,
    Unary,
    WindowPixel,
)


class UnsupportedKind(Exception):
    pass


class NonStreamable(Exception):
    pass


# -- DOT ---------------------------------------------------------------------


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def _data_label(d: DataObject) -> str:
    desc = d.desc
    if desc.kind == DataKind.IMAGE:
        extra = f"{desc.format} {desc.width}x{desc.height}" if desc.width else str(desc.format)
    else:
        extra = f"{desc.kind.value.lower()} {desc.format}"
    return f"{d.label}\\n{extra}"


def emit_dot(g, stage: str = "graph") -> str:
    """Render a graph stage in the Graphviz language.

    ``g`` may be a Graph, a VerifiedGraph, a FilteredGraph (dead vertices are
    drawn grey) or a FusedPlan (the fused graph is drawn).
    """
    dead = frozenset()
    if hasattr(g, "alive") and hasattr(g, "base"):
        dead = g.dead
        graph = g.graph
    elif hasattr(g, "fused") and hasattr(g, "filtered"):
        graph = g.fused
    else:
        graph = getattr(g, "graph", g)
    lines = [f'digraph "{_dot_escape(stage)}" {{', "  rankdir=TB;", '  node [fontname="Helvetica"];']
    for oid in sorted(graph.data):
        d = graph.data[oid]
        attrs = [f'label="{_dot_escape(_data_label(d))}"', "shape=ellipse"]
        if d.virtual:
            attrs.append("style=dashed")
        if oid in dead:
            attrs += ["color=grey", "fontcolor=grey"]
        lines.append(f"  d{oid} [{', '.join(attrs)}];")
    for nid in sorted(graph.nodes):
        n = graph.nodes[nid]
        kind = n.kernel.kind if n.is_abstraction else "cv"
        attrs = [f'label="{_dot_escape(n.label)}\\n{kind}"', "shape=box"]
        if nid in dead:
            attrs += ["color=grey", "fontcolor=grey"]
        lines.append(f"  n{nid} [{', '.join(attrs)}];")
    for a, b in sorted(graph.edges()):
        sa = f"d{a}" if a in graph.data else f"n{a}"
        sb = f"d{b}" if b in graph.data else f"n{b}"
        style = " [color=grey]" if a in dead or b in dead else ""
        lines.append(f"  {sa} -> {sb}{style};")
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- C source ----------------------------------------------------------------

C_HELPERS = r"""#include <math.h>
#ifndef GVX_HELPERS
#define GVX_HELPERS
typedef long long gvx_i;
typedef unsigned long long gvx_u;
static gvx_i gvx_add(gvx_i a, gvx_i b) { return (gvx_i)((gvx_u)a + (gvx_u)b); }
static gvx_i gvx_sub(gvx_i a, gvx_i b) { return (gvx_i)((gvx_u)a - (gvx_u)b); }
static gvx_i gvx_mul(gvx_i a, gvx_i b) { return (gvx_i)((gvx_u)a * (gvx_u)b); }
static gvx_i gvx_neg(gvx_i a) { return (gvx_i)(0ULL - (gvx_u)a); }
static gvx_i gvx_abs(gvx_i a) { return a < 0 ? gvx_neg(a) : a; }
static gvx_i gvx_shl(gvx_i a, gvx_i b) { return (b < 0 || b > 63) ? 0 : (gvx_i)((gvx_u)a << b); }
static gvx_i gvx_shr(gvx_i a, gvx_i b) { return b > 63 ? (a < 0 ? -1 : 0) : (b < 0 ? a : a >> b); }
static gvx_i gvx_idiv(gvx_i a, gvx_i b) {
  if (b == 0) return 0;
  if (b == -1) return gvx_neg(a);
  return a / b;
}
static gvx_i gvx_imin(gvx_i a, gvx_i b) { return a < b ? a : b; }
static gvx_i gvx_imax(gvx_i a, gvx_i b) { return a > b ? a : b; }
static double gvx_fmin(double a, double b) { return a != a ? a : (b != b ? b : (a < b ? a : b)); }
static double gvx_fmax(double a, double b) { return a != a ? a : (b != b ? b : (a > b ? a : b)); }
static gvx_i gvx_clampi(gvx_i v, gvx_i lo, gvx_i hi) { return v < lo ? lo : (v > hi ? hi : v); }
static double gvx_round(double x) { return round(x); }
static gvx_i gvx_wrap(gvx_i v, gvx_i lo, gvx_u mask) { return (gvx_i)((((gvx_u)v - (gvx_u)lo) & mask) + (gvx_u)lo); }
static gvx_i gvx_f2i_sat(double x, gvx_i lo, gvx_i hi) {
  double f = x != x ? 0.0 : gvx_round(x);
  if (f <= (double)lo) return lo;
  if (f >= (double)hi) return hi;
  return (gvx_i)f;
}
static gvx_i gvx_f2i_sat64(double x) {
  double f = x != x ? 0.0 : gvx_round(x);
  if (f >= 9.2e18) return 9223372036854775807LL;
  if (f <= -9.2e18) return -9223372036854775807LL - 1;
  return (gvx_i)f;
}
static gvx_i gvx_f2i_wide(double x) {
  double f = x != x ? 0.0 : gvx_round(x);
  if (f > 9.2e18) f = 9.2e18;
  if (f < -9.2e18) f = -9.2e18;
  return (gvx_i)f;
}
#endif
"""

_CTYPE = {
    Format.U8: "unsigned char",
    Format.U16: "unsigned short",
    Format.S16: "short",
    Format.S32: "int",
    Format.F32: "float",
    Format.RGB: "unsigned char",
    Format.UYVY: "unsigned char",
    Format.COORD: "int",
}


def _elem_ctype(desc: Desc) -> str:
    if desc.kind == DataKind.DISTRIBUTION:
        return "int"
    return _CTYPE[desc.format]


def _cfloat(v: float) -> str:
    if math.isnan(v):
        return "NAN"
    if math.isinf(v):
        return "HUGE_VAL" if v > 0 else "(-HUGE_VAL)"
    s = repr(float(v))
    if "e" not in s and "." not in s:
        s += ".0"
    return s


def _cint(v: int) -> str:
    if v == -(2**63):
        return "(-9223372036854775807LL - 1)"
    return f"{int(v)}LL"


class _Emitter:
    """Expression-to-C translation with common-subexpression temporaries."""

    def __init__(self, kernel, in_descs, acc_float=None, indent="      "):
        self.k = kernel
        self.descs = in_descs
        self.lines: list[str] = []
        self.memo: dict[int, tuple[str, bool]] = {}
        self.n = 0
        self.acc_float = acc_float
        self.indent = indent
        self.mask_float = bool(
            isinstance(kernel, LocalKernel) and kernel.mask
            and any(isinstance(v, float) for r in kernel.mask for v in r)
        )

    def tmp(self, expr: str, is_float: bool) -> tuple[str, bool]:
        name = f"t{self.n}"
        self.n += 1
        self.lines.append(f"{self.indent}{'double' if is_float else 'gvx_i'} {name} = {expr};")
        return name, is_float

    def pixel(self, index: int, ch: int, xs: str, ys: str) -> tuple[str, bool]:
        d = self.descs[index]
        is_float = d.format == Format.F32
        if d.kind != DataKind.IMAGE:
            return f"in{index}", d.format in (Format.F32,)
        c = F.channels(d.format)
        idx = f"({ys}) * width + ({xs})"
        if c > 1:
            idx = f"(({idx}) * {c} + {ch})"
        return f"(({'double' if is_float else 'gvx_i'})in{index}[{idx}])", is_float

    def window(self, e: WindowPixel) -> tuple[str, bool]:
        k = self.k
        bx = f"x + {e.dx}" if k.combine is None else f"x + tx + {e.dx}"
        by = f"y + {e.dy}" if k.combine is None else f"y + ty + {e.dy}"
        if k.boundary.mode == "constant":
            inside = f"(({bx}) >= 0 && ({bx}) < width && ({by}) >= 0 && ({by}) < height)"
            val, fl = self.pixel(e.index, e.channel, bx, by)
            c = _cfloat(float(k.boundary.value)) if fl else _cint(k.boundary.value)
            return self.tmp(f"{inside} ? {val} : {c}", fl)
        xs = f"gvx_clampi({bx}, 0, width - 1)"
        ys = f"gvx_clampi({by}, 0, height - 1)"
        return self.tmp(self.pixel(e.index, e.channel, xs, ys)[0], self.descs[e.index].format == Format.F32)

    def emit(self, e) -> tuple[str, bool]:
        key = id(e)
        if key in self.memo:
            return self.memo[key]
        r = self._emit(e)
        self.memo[key] = r
        return r

    def _emit(self, e) -> tuple[str, bool]:
        if isinstance(e, ConstI):
            return _cint(e.value), False
        if isinstance(e, ConstF):
            return _cfloat(e.value), True
        if isinstance(e, InputPixel):
            return self.tmp(*self.pixel(e.index, e.channel, "x", "y"))
        if isinstance(e, WindowPixel):
            return self.window(e)
        if isinstance(e, MaskCoef):
            k = self.k
            if k.combine is None:
                return self.tmp(f"mask[{k.ry + e.dy}][{k.rx + e.dx}]", self.mask_float)
            return self.tmp(f"mask[ty + {k.ry + e.dy}][tx + {k.rx + e.dx}]", self.mask_float)
        if isinstance(e, Acc):
            return "acc", bool(self.acc_float)
        if isinstance(e, Lookup):
            i, _ = self.emit(e.operand)
            d = self.descs[e.index]
            n = d.capacity or int(np.prod(d.shape()))
            fl = d.format == Format.F32
            return self.tmp(f"({'double' if fl else 'gvx_i'})in{e.index}[gvx_clampi({i}, 0, {n - 1})]", fl)
        if isinstance(e, Binary):
            return self.binary(e)
        if isinstance(e, Unary):
            a, fa = self.emit(e.operand)
            if e.op == "sqrt":
                return self.tmp(f"sqrt((double)({a}))", True)
            if e.op == "not":
                return self.tmp(f"~({a})", False)
            if e.op == "neg":
                return self.tmp(f"-({a})" if fa else f"gvx_neg({a})", fa)
            return self.tmp(f"fabs({a})" if fa else f"gvx_abs({a})", fa)
        if isinstance(e, Select):
            c, _ = self.emit(e.cond)
            a, fa = self.emit(e.a)
            b, fb = self.emit(e.b)
            fl = fa or fb
            if fl:
                a, b = f"(double)({a})", f"(double)({b})"
            return self.tmp(f"({c}) != 0 ? {a} : {b}", fl)
        if isinstance(e, Cast):
            return self.cast(e)
        raise UnsupportedKind(f"cannot emit {type(e).__name__}")

    def binary(self, e: Binary) -> tuple[str, bool]:
        a, fa = self.emit(e.lhs)
        b, fb = self.emit(e.rhs)
        op = e.op
        fl = fa or fb
        if op in ("lt", "gt", "eq"):
            sym = {"lt": "<", "gt": ">", "eq": "=="}[op]
            return self.tmp(f"(gvx_i)(({a}) {sym} ({b}))", False)
        if op == "atan2":
            return self.tmp(f"atan2((double)({a}), (double)({b}))", True)
        if op in ("and", "or", "xor"):
            sym = {"and": "&", "or": "|", "xor": "^"}[op]
            return self.tmp(f"({a}) {sym} ({b})", False)
        if op in ("shl", "shr"):
            return self.tmp(f"gvx_{op}({a}, {b})", False)
        if fl:
            a, b = f"(double)({a})", f"(double)({b})"
            if op in ("min", "max"):
                return self.tmp(f"gvx_f{op}({a}, {b})", True)
            sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[op]
            return self.tmp(f"{a} {sym} {b}", True)
        if op in ("min", "max"):
            return self.tmp(f"gvx_i{op}({a}, {b})", False)
        fn = {"add": "gvx_add", "sub": "gvx_sub", "mul": "gvx_mul", "div": "gvx_idiv"}[op]
        return self.tmp(f"{fn}({a}, {b})", False)

    def cast(self, e: Cast) -> tuple[str, bool]:
        v, fv = self.emit(e.operand)
        t = e.target
        if t == Format.F64:
            return self.tmp(f"(double)({v})", True)
        if t == Format.F32:
            return self.tmp(f"(double)(float)({v})", True)
        lo, hi = F.INT_RANGE[t]
        if t == Format.I64:
            return self.tmp(f"gvx_f2i_sat64({v})" if fv else v, False)
        if fv:
            if e.policy == "saturate":
                return self.tmp(f"gvx_f2i_sat({v}, {_cint(lo)}, {_cint(hi)})", False)
            v, fv = self.tmp(f"gvx_f2i_wide({v})", False)
        if e.policy == "saturate":
            return self.tmp(f"gvx_clampi({v}, {_cint(lo)}, {_cint(hi)})", False)
        mask = hi - lo
        return self.tmp(f"gvx_wrap({v}, {_cint(lo)}, {mask}ULL)", False)


def _c_ident(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9_]", "_", s)


def _param_decl(i: int, d: Desc) -> str:
    if d.kind == DataKind.SCALAR:
        return f"{'double' if d.format == Format.F32 else 'gvx_i'} in{i}"
    return f"const {_elem_ctype(d)} *in{i}"


def _store_line(out: Desc, value: str, ch: int = 0, nch: int = 1) -> str:
    idx = "y * width + x" if nch == 1 else f"(y * width + x) * {nch} + {ch}"
    return f"out[{idx}] = ({_CTYPE[out.format]})({value});"


def emit_function(name: str, kernel, in_descs: list[Desc], out: Desc) -> str:
    """C source of one point or local kernel as a self-contained function."""
    if kernel.kind not in ("point", "local"):
        raise UnsupportedKind(f"{kernel.name}: {kernel.kind} kernels run as host steps")
    params = ["int width", "int height"] + [_param_decl(i, d) for i, d in enumerate(in_descs)]
    params.append(f"{_CTYPE[out.format]} *out")
    lines = [C_HELPERS, f"void {name}({', '.join(params)}) {{"]
    if isinstance(kernel, LocalKernel) and kernel.mask is not None:
        fl = any(isinstance(v, float) for r in kernel.mask for v in r)
        rows = ", ".join("{" + ", ".join(_cfloat(v) if fl else _cint(v) for v in r) + "}" for r in kernel.mask)
        lines.append(f"  static const {'double' if fl else 'gvx_i'} mask[{kernel.window_h}][{kernel.window_w}] = {{{rows}}};")
    lines.append("  for (int y = 0; y < height; ++y) {")
    lines.append("    for (int x = 0; x < width; ++x) {")
    if isinstance(kernel, PointKernel):
        em = _Emitter(kernel, in_descs)
        vals = [em.emit(b)[0] for b in kernel.bodies]
        lines += em.lines
        for ch, v in enumerate(vals):
            lines.append("      " + _store_line(out, v, ch, len(vals)))
    else:
        k: LocalKernel = kernel
        if k.boundary.mode == "undefined":
            lines.append(
                f"      if (y < {k.ry} || y >= height - {k.ry} || x < {k.rx} || x >= width - {k.rx}) "
                f"{{ out[y * width + x] = 0; continue; }}"
            )
        tap_em = _Emitter(k, in_descs, indent="          ")
        tv, tf = tap_em.emit(k.tap_body)
        acc_float = tf
        if k.combine is None:
            lines += [ln[4:] for ln in tap_em.lines]
            lines.append(f"      {'double' if acc_float else 'gvx_i'} acc = {tv};")
        else:
            lines.append(f"      {'double' if acc_float else 'gvx_i'} acc = 0;")
            lines.append("      int first = 1;")
            lines.append(f"      for (int ty = -{k.ry}; ty <= {k.ry}; ++ty) {{")
            lines.append(f"        for (int tx = -{k.rx}; tx <= {k.rx}; ++tx) {{")
            lines += tap_em.lines
            if k.combine.value == "sum":
                fold = f"acc + {tv}" if acc_float else f"gvx_add(acc, {tv})"
            else:
                fold = f"gvx_{'f' if acc_float else 'i'}{k.combine.value}(acc, {tv})"
            lines.append(f"          acc = first ? {tv} : {fold};")
            lines.append("          first = 0;")
            lines.append("        }")
            lines.append("      }")
        if k.post_body is not None:
            post_em = _Emitter(k, in_descs, acc_float=acc_float)
            post_em.n = tap_em.n
            pv = post_em.emit(k.post_body)[0]
            lines += post_em.lines
        else:
            pv = "acc"
        lines.append("      " + _store_line(out, pv))
    lines += ["    }", "  }", "}", ""]
    return "\n".join(lines)


@dataclass
class KernelSource:
    units: list  # [{"function", "node", "source"}]
    manifest: dict

    def combined(self) -> str:
        return "\n".join(u["source"] for u in self.units)


def _desc_json(oid: int, d: Desc, virtual: bool) -> dict:
    j = d.to_json()
    j["data"] = oid
    j["virtual"] = virtual
    return j


def emit_kernel_source(plan) -> KernelSource:
    """One C function per device kernel of ``plan`` plus a JSON manifest."""
    g = plan.fused
    units, launches, host = [], [], []
    for pos, nid in enumerate(plan.order):
        n = g.nodes[nid]
        k = n.kernel
        in_ids = [oid for _, oid in sorted(n.inputs())]
        out_id = n.outputs()[0][1]
        in_descs = [g.data[i].desc for i in in_ids]
        out = g.data[out_id].desc
        entry = {
            "node": nid,
            "name": k.name,
            "kind": k.kind,
            "position": pos,
            "inputs": [_desc_json(i, g.data[i].desc, g.data[i].virtual) for i in in_ids],
            "output": _desc_json(out_id, out, g.data[out_id].virtual),
        }
        if k.kind in ("point", "local"):
            fname = f"gvx_k{nid}_{_c_ident(k.name)}"[:80]
            units.append({"function": fname, "node": nid, "source": emit_function(fname, k, in_descs, out)})
            entry["function"] = fname
            if k.kind == "local":
                entry["window"] = [k.window_w, k.window_h]
                entry["boundary"] = str(k.boundary)
            launches.append(entry)
        else:
            entry["host_step"] = True
            host.append(entry)
    manifest = {
        "dialect": "c-subset",
        "kernels": launches,
        "host_steps": host,
        "launch_order": [e["node"] for e in sorted(launches + host, key=lambda e: e["position"])],
    }
    return KernelSource(units, manifest)


_CT = {
    "unsigned char": ctypes.c_uint8,
    "unsigned short": ctypes.c_uint16,
    "short": ctypes.c_int16,
    "int": ctypes.c_int32,
    "float": ctypes.c_float,
}


def compiler() -> str | None:
    return os.environ.get("CC") or shutil.which("gcc") or shutil.which("cc")


def compile_source(src: KernelSource, workdir: str | None = None) -> ctypes.CDLL:
    """Build all units into one shared object and load it."""
    cc = compiler()
    if cc is None:
        raise RuntimeError("no C compiler found")
    workdir = workdir or tempfile.mkdtemp(prefix="gvx_")
    c_path = os.path.join(workdir, "kernels.c")
    so_path = os.path.join(workdir, "kernels.so")
    with open(c_path, "w") as fh:
        fh.write(src.combined())
    cmd = [cc, "-std=c99", "-shared", "-fPIC", "-O1", "-ffp-contract=off", "-fno-fast-math", c_path, "-o", so_path,
           "-lm"]
    res = subprocess.run(cmd, capture_output=True, text=True)
    if res.returncode != 0:
        raise RuntimeError(f"compilation failed:\n{res.stderr}")
    return ctypes.CDLL(so_path)


def run_native(plan, src: KernelSource, lib: ctypes.CDLL, inputs) -> dict:
    """Execute ``plan`` calling compiled functions for device kernels.

    Host steps (global kernels) use the reference evaluator.  Returns the
    non-virtual outputs keyed by data id.
    """
    from .execute import bind_inputs, empty_buffer, run_kernel

    g = plan.fused
    bufs = bind_inputs(g, inputs)
    funcs = {u["node"]: u["function"] for u in src.units}
    keep = []
    for nid in plan.order:
        n = g.nodes[nid]
        in_ids = [oid for _, oid in sorted(n.inputs())]
        out_id = n.outputs()[0][1]
        out = g.data[out_id].desc
        in_descs = [g.data[i].desc for i in in_ids]
        if nid not in funcs:
            bufs[out_id] = run_kernel(n.kernel, [bufs[i] for i in in_ids], in_descs, out)
            continue
        res = empty_buffer(out)
        args = [ctypes.c_int(out.width), ctypes.c_int(out.height)]
        for i, d in zip(in_ids, in_descs):
            if d.kind == DataKind.SCALAR:
                v = np.asarray(bufs[i]).item()
                args.append(ctypes.c_double(float(v)) if d.format == Format.F32 else ctypes.c_longlong(int(v)))
                continue
            b = np.ascontiguousarray(bufs[i])
            keep.append(b)
            args.append(b.ctypes.data_as(ctypes.c_void_p))
        args.append(res.ctypes.data_as(ctypes.c_void_p))
        getattr(lib, funcs[nid])(*args)
        bufs[out_id] = res
    produced = g.producers()
    return {oid: bufs[oid] for oid in sorted(g.data) if not g.data[oid].virtual and oid in produced}


# -- streaming plan ----------------------------------------------------------


def emit_stream_plan(plan, v: int = 1, slack: int = 2) -> dict:
    """Streaming pipeline description of a fused plan."""
    if v < 1:
        raise ValueError("replication factor v must be >= 1")
    g = plan.fused
    prod = g.producers()
    for oid, ps in prod.items():
        if len(ps) > 1:
            raise NonStreamable(f"data {oid} has {len(ps)} producers")
    stages, barriers, fifos = [], [], []
    segment = 0
    last_was_barrier = False
    stage_of = {}
    for pos, nid in enumerate(topo_sort(g)):
        n = g.nodes[nid]
        k = n.kernel
        out_id = n.outputs()[0][1]
        out = g.data[out_id].desc
        if k.is_global:
            barriers.append({"node": nid, "name": k.name, "kind": k.kind, "position": pos})
            if not last_was_barrier and stages:
                segment += 1
            last_was_barrier = True
            stage_of[nid] = None
            continue
        last_was_barrier = False
        st = {
            "node": nid,
            "name": k.name,
            "kind": k.kind,
            "position": pos,
            "segment": segment,
            "replication": v,
            "width": out.width,
            "height": out.height,
            "inputs": [oid for _, oid in sorted(n.inputs())],
            "output": out_id,
        }
        if k.kind == "local":
            st["window"] = [k.window_w, k.window_h]
            st["line_buffers"] = [
                {
                    "data": oid,
                    "rows": k.window_h - 1,
                    "extra_pixels": k.window_w - 1,
                    "elements": (k.window_h - 1) * out.width + (k.window_w - 1),
                }
                for i, oid in enumerate(st["inputs"])
                if i in k.windowed_inputs()
            ]
        stages.append(st)
        stage_of[nid] = len(stages) - 1
    cons = g.consumers()
    for oid in sorted(g.data):
        if not g.data[oid].virtual or oid not in prod:
            continue
        for c, _ in cons.get(oid, []):
            fifos.append({"data": oid, "from": prod[oid][0], "to": c, "depth": max(1, slack)})
    n_segments = len({s["segment"] for s in stages})
    return {
        "v": v,
        "slack": slack,
        "stages": stages,
        "fifos": fifos,
        "barriers": barriers,
        "segments": n_segments,
    }


def validate_stream_plan(sp: dict, plan) -> list[str]:
    """Structural problems of a stream plan (empty when valid)."""
    problems = []
    g = plan.fused
    order = {nid: i for i, nid in enumerate(topo_sort(g))}
    last = -1
    for st in sp["stages"]:
        if order[st["node"]] <= last:
            problems.append(f"stage {st['node']} out of topological order")
        last = order[st["node"]]
        if st["replication"] < 1:
            problems.append(f"stage {st['node']} has replication < 1")
        k = g.nodes[st["node"]].kernel
        if k.kind == "local":
            for lb in st["line_buffers"]:
                if lb["rows"] != k.window_h - 1 or lb["extra_pixels"] != k.window_w - 1:
                    problems.append(f"stage {st['node']} line buffer does not match window")
    for f in sp["fifos"]:
        if f["depth"] < 1:
            problems.append(f"fifo on {f['data']} has depth < 1")
    return problems


def simulate_stream(sp: dict, plan, inputs) -> dict:
    """Row-by-row streaming execution with ``v`` column-interleaved lanes.

    Local stages only ever see ``window_h`` rows of each windowed input (the
    line buffer plus the incoming row).  Returns non-virtual outputs.
    """
    from .execute import bind_inputs, empty_buffer, eval_local, eval_point, run_kernel

    g = plan.fused
    bufs = bind_inputs(g, inputs)
    v = sp["v"]
    stages = {st["node"]: st for st in sp["stages"]}
    for nid in topo_sort(g):
        n = g.nodes[nid]
        k = n.kernel
        in_ids = [oid for _, oid in sorted(n.inputs())]
        out_id = n.outputs()[0][1]
        out = g.data[out_id].desc
        in_descs = [g.data[i].desc for i in in_ids]
        vals = [bufs[i] for i in in_ids]
        if nid not in stages:
            bufs[out_id] = run_kernel(k, vals, in_descs, out)
            continue
        res = empty_buffer(out)
        written = np.zeros((out.height, out.width), dtype=np.int32)
        h = out.height
        for y in range(h):
            if k.kind == "point":
                rows = [b[y:y + 1] if d.kind == DataKind.IMAGE else b for b, d in zip(vals, in_descs)]
                row = eval_point(k, rows, out.with_(height=1))[0]
            else:
                if k.boundary.mode == "undefined" and (y < k.ry or y >= h - k.ry):
                    row = np.zeros_like(res[y])
                else:
                    strip = [_strip(b, y, k) if d.kind == DataKind.IMAGE else b for b, d in zip(vals, in_descs)]
                    row = eval_local(k, strip, out.with_(height=k.window_h))[k.ry]
            for lane in range(v):
                res[y, lane::v] = row[lane::v]
                written[y, lane::v] += 1
        if not (written == 1).all():
            raise NonStreamable(f"lanes of stage {nid} do not partition the row")
        bufs[out_id] = res
    produced = g.producers()
    return {oid: bufs[oid] for oid in sorted(g.data) if not g.data[oid].virtual and oid in produced}


def _strip(img: np.ndarray, y: int, k: LocalKernel) -> np.ndarray:
    """Rows y-ry..y+ry as held by the line buffer (boundary rows synthesized)."""
    h = img.shape[0]
    rows = []
    for dy in range(-k.ry, k.ry + 1):
        yy = y + dy
        if 0 <= yy < h:
            rows.append(img[yy])
        elif k.boundary.mode == "constant":
            rows.append(np.full_like(img[0], k.boundary.value))
        else:
            rows.append(img[min(max(yy, 0), h - 1)])
    return np.stack(rows)


def stream_plan_json(sp: dict) -> str:
    return json.dumps(sp, sort_keys=True, indent=2)
