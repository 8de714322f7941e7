"""Random graph generators for DCE and fusion properties."""
from __future__ import annotations

import networkx as nx
import numpy as np

from graphvx.formats import Format
from graphvx.graph import Context
from graphvx.ir import InputPixel, PointKernel, cast


def _mix(arity: int) -> PointKernel:
    body = InputPixel(0)
    for i in range(1, arity):
        body = body + InputPixel(i)
    return PointKernel(f"Mix{arity}", arity, cast(Format.U8, body, "wrap"))


def random_dag(seed: int, n_vertices: int, p_observable: float = 0.25, size=(4, 4)):
    """Bipartite DAG of abstraction point nodes with roughly ``n_vertices`` vertices.

    Each operator reads 1-3 earlier data objects and writes one fresh object,
    which is non-virtual (observable) with probability ``p_observable``.
    """
    rng = np.random.default_rng(seed)
    ctx = Context()
    g = ctx.create_graph()
    w, h = size
    n_src = max(1, int(rng.integers(1, 4)))
    pool = [ctx.create_image(w, h, Format.U8) for _ in range(n_src)]
    count = n_src
    while count + 2 <= n_vertices:
        arity = int(rng.integers(1, min(3, len(pool)) + 1))
        ins = [pool[i] for i in rng.choice(len(pool), size=arity, replace=False)]
        if rng.random() < p_observable:
            out = ctx.create_image(w, h, Format.U8)
        else:
            out = g.create_virtual_image(w, h, Format.U8)
        g.add_node(_mix(arity), ins + [out])
        pool.append(out)
        count += 2
    for s in pool[:n_src]:  # unread sources still belong to the graph
        g.data.setdefault(s.id, s)
    return g


def reverse_reachable(g) -> set:
    """Oracle: every vertex with a directed path to a non-virtual sink or middle object."""
    dg = nx.DiGraph()
    dg.add_nodes_from(g.vertices())
    dg.add_edges_from(g.edges())
    d_out = {v for v, d in g.data.items() if not d.virtual and dg.in_degree(v) > 0}
    alive = set(d_out)
    for v in d_out:
        alive |= nx.ancestors(dg, v)
    return alive


POINT2 = ["Add", "Subtract", "AbsDiff", "And", "Or", "Xor"]
LOCAL1 = ["Box3x3", "Gaussian3x3", "Median3x3", "Dilate3x3", "Erode3x3"]


def random_pipeline(seed: int, n_nodes: int = 8, size=(12, 10)):
    """Random U8 vision-function DAG mixing point and local nodes; some branches dead."""
    rng = np.random.default_rng(seed)
    ctx = Context()
    g = ctx.create_graph()
    w, h = size
    pool = [ctx.create_image(w, h, Format.U8, f"in{i}") for i in range(2)]
    outs = []
    for k in range(n_nodes):
        last = k == n_nodes - 1
        out = ctx.create_image(w, h, Format.U8, f"out{k}") if (last or rng.random() < 0.2) else \
            g.create_virtual_image(name=f"v{k}")
        r = rng.random()
        if r < 0.4:
            a, b = (pool[i] for i in rng.choice(len(pool), size=2))
            g.add_node(str(rng.choice(POINT2)), [a, b, out])
        elif r < 0.55:
            g.add_node("Not", [pool[int(rng.integers(len(pool)))], out])
        else:
            attrs = {"border": str(rng.choice(["clamp", "constant:17", "undefined"]))}
            g.add_node(str(rng.choice(LOCAL1)), [pool[int(rng.integers(len(pool)))], out], attrs)
        pool.append(out)
        if not out.virtual:
            outs.append(out)
    return g, pool[:2], outs
