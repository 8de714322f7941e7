"""Shared builders for the test-suite."""
from __future__ import annotations

import numpy as np

from graphvx.execute import random_buffer, run_naive, run_plan
from graphvx.formats import Format
from graphvx.graph import Context
from graphvx.optimize import optimize
from graphvx.verify import verify


def edge_detector(w: int = 64, h: int = 48):
    """Edge detector: UYVY in, luma, blur, Sobel, |gy| magnitude, threshold."""
    ctx = Context()
    g = ctx.create_graph()
    inp = ctx.create_image(w, h, Format.UYVY, "img0")
    out = ctx.create_image(w, h, Format.U8, "img1")
    t = ctx.create_scalar(Format.S16, 100, "thresh")
    v = [g.create_virtual_image(name=f"virt{i}") for i in range(5)]
    g.add_node("ChannelExtract", [inp, v[0]], {"channel": "Y"})
    g.add_node("Gaussian3x3", [v[0], v[1]])
    g.add_node("Sobel3x3", [v[1], v[2], v[3]])
    g.add_node("Magnitude", [v[3], v[3], v[4]])
    g.add_node("Threshold", [v[4], t, out])
    return ctx, g, inp, out


def single_node(kernel, specs, attrs=None, rng=None, w=16, h=16):
    """Graph holding one vision-function node.

    ``specs`` lists parameters in signature order:
    ``("in", fmt)`` random input image, ``("out", fmt)`` output image,
    ``("scalar", fmt, value)``, ``("matrix", fmt, values)``,
    ``("dist", bins, offset, range)``, ``("array", capacity)``,
    ``("oscalar", fmt)`` output scalar, ``("img", fmt, w, h)`` output image
    with explicit dims, or None.
    Returns (graph, input values by id, list of input arrays, output objects).
    """
    rng = rng or np.random.default_rng(0)
    ctx = Context()
    g = ctx.create_graph()
    params, inputs, arrays, outs = [], {}, [], []
    for s in specs:
        if s is None:
            params.append(None)
            continue
        tag = s[0]
        if tag == "in":
            o = ctx.create_image(w, h, Format(s[1]))
            arr = random_buffer(o.desc, rng)
            inputs[o.id] = arr
            arrays.append(arr)
        elif tag == "out":
            o = ctx.create_image(w, h, Format(s[1]))
            outs.append(o)
        elif tag == "img":
            o = ctx.create_image(s[2], s[3], Format(s[1]))
            outs.append(o)
        elif tag == "scalar":
            o = ctx.create_scalar(Format(s[1]), s[2])
        elif tag == "oscalar":
            o = ctx.create_scalar(Format(s[1]))
            outs.append(o)
        elif tag == "matrix":
            vals = np.asarray(s[2])
            o = ctx.create_matrix(vals.shape[0], vals.shape[1], Format(s[1]), vals)
        elif tag == "dist":
            o = ctx.create_distribution(s[1], s[2], s[3])
            outs.append(o)
        elif tag == "array":
            o = ctx.create_array(s[1], Format.COORD)
            outs.append(o)
        else:
            raise ValueError(tag)
        params.append(o)
    g.add_node(kernel, params, attrs or {})
    return g, inputs, arrays, outs


def run_both(g, inputs):
    """(naive report, plan report) for a graph."""
    vg = verify(g)
    return run_naive(vg, inputs), run_plan(optimize(vg), inputs)


def outputs_equal(a: dict, b: dict, rel: float = 0.0) -> bool:
    if a.keys() != b.keys():
        return False
    for k in a:
        x, y = np.asarray(a[k]), np.asarray(b[k])
        if x.shape != y.shape:
            return False
        if x.dtype.kind == "f" and rel > 0:
            if not np.allclose(x, y, rtol=rel, atol=0.0, equal_nan=True):
                return False
        elif not np.array_equal(x, y, equal_nan=x.dtype.kind == "f"):
            return False
    return True
