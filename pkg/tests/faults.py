"""Deliberately broken graphs and the diagnostic codes each must produce."""
from __future__ import annotations

from graphvx.graph import Context


def _base():
    ctx = Context()
    g = ctx.create_graph()
    return ctx, g, ctx.create_image(16, 16, "U8", "src"), ctx.create_image(16, 16, "U8", "dst")


def cycle():
    ctx, g, src, dst = _base()
    a, b = g.create_virtual_image(name="a"), g.create_virtual_image(name="b")
    g.add_node("Add", [src, b, a], strict=False)
    g.add_node("Not", [a, b], strict=False)
    g.add_node("Copy", [a, dst], strict=False)
    return g


def non_bipartite():
    ctx, g, src, dst = _base()
    first = g.add_node("Not", [src, dst], strict=False)
    # second node binds the first node itself as its input
    g.add_node("Not", [first.id, ctx.create_image(16, 16, "U8")], strict=False)
    return g


def foreign_virtual():
    ctx, g, src, dst = _base()
    other = ctx.create_graph()
    g.add_node("Not", [other.create_virtual_image(16, 16, "U8"), dst], strict=False)
    return g


def unbound_param():
    ctx, g, src, dst = _base()
    g.add_node("Add", {"in1": src, "out": dst}, strict=False)
    return g


def kind_mismatch():
    ctx, g, src, dst = _base()
    g.add_node("Threshold", [src, ctx.create_image(16, 16, "U8"), dst], strict=False)
    return g


def format_mismatch():
    ctx, g, src, dst = _base()
    g.add_node("Sobel3x3", [src, dst], strict=False)  # Sobel writes S16, dst is U8
    return g


def double_writer():
    ctx, g, src, dst = _base()
    g.add_node("Not", [src, dst], strict=False)
    g.add_node("Copy", [src, dst], strict=False)
    return g


def unresolvable_virtual():
    ctx, g, src, dst = _base()
    v = g.create_virtual_image(name="scaled")  # ScaleImage cannot guess output dims
    g.add_node("ScaleImage", [src, v], strict=False)
    g.add_node("Not", [v, dst], strict=False)
    return g


def dangling_virtual():
    ctx, g, src, dst = _base()
    g.create_virtual_image(name="orphan")
    g.add_node("Not", [src, dst])
    return g


def read_never_written():
    ctx, g, src, dst = _base()
    v = g.create_virtual_image(16, 16, "U8", name="ghost")
    g.add_node("And", [src, v, dst], strict=False)
    return g


def unknown_kernel():
    ctx, g, src, dst = _base()
    g.add_node("Frobnicate", [src, dst], strict=False)
    return g


def threshold_out_of_range():
    ctx, g, src, dst = _base()
    g.add_node("Threshold", [src, ctx.create_scalar("S16", 400), dst], strict=False)
    return g


FAULTS = {
    "cycle": (cycle, {"CycleDetected"}),
    "non_bipartite": (non_bipartite, {"NotBipartite"}),
    "foreign_virtual": (foreign_virtual, {"NotBipartite"}),
    "unbound_param": (unbound_param, {"UnboundParam"}),
    "kind_mismatch": (kind_mismatch, {"FormatMismatch"}),
    "format_mismatch": (format_mismatch, {"FormatMismatch"}),
    "double_writer": (double_writer, {"MultipleWriters"}),
    "unresolvable_virtual": (unresolvable_virtual, {"UnresolvedVirtualFormat"}),
    "dangling_virtual": (dangling_virtual, {"UnresolvedVirtualFormat"}),
    "read_never_written": (read_never_written, {"DirectionMismatch"}),
    "unknown_kernel": (unknown_kernel, {"UnknownKernel"}),
    "threshold_out_of_range": (threshold_out_of_range, {"FormatMismatch"}),
}
