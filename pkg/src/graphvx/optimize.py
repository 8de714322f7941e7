"""Graph optimizations: dead computation elimination, transfer planning, fusion."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .formats import DataKind
from .graph import Graph, topo_sort
from .ir import (
    Acc,
    Boundary,
    InputPixel,
    KernelTypeError,
    LocalKernel,
    Lookup,
    PointKernel,
    WindowPixel,
    rebuild,
    typecheck,
)
from .verify import VerifiedGraph, lower, require_stamped

# -- dead computation elimination -------------------------------------------


@dataclass(frozen=True)
class FilteredGraph:
    """Alive-vertex view over a verified implementation graph."""

    base: VerifiedGraph
    alive: frozenset
    d_in: frozenset
    d_out: frozenset
    visit_steps: int = 0

    @property
    def graph(self) -> Graph:
        return self.base.graph

    @property
    def nodes(self) -> dict:
        return {k: n for k, n in self.graph.nodes.items() if k in self.alive}

    @property
    def data(self) -> dict:
        return {k: d for k, d in self.graph.data.items() if k in self.alive}

    @property
    def dead(self) -> frozenset:
        return frozenset(self.graph.vertices()) - self.alive

    def edges(self) -> set:
        return {(a, b) for a, b in self.graph.edges() if a in self.alive and b in self.alive}

    def view(self) -> Graph:
        """Materialize the filtered view as a standalone graph."""
        g = Graph(self.graph.id, self.graph.context)
        g.nodes = self.nodes
        g.data = self.data
        g.provenance = {k: v for k, v in self.graph.provenance.items() if k in self.alive}
        g.version = self.graph.version
        return g


def _adjacency(g: Graph):
    preds: dict[int, list[int]] = {v: [] for v in g.vertices()}
    indeg = {v: 0 for v in preds}
    outdeg = {v: 0 for v in preds}
    for a, b in sorted(g.edges()):
        preds[b].append(a)
        outdeg[a] += 1
        indeg[b] += 1
    return preds, indeg, outdeg


def eliminate_dead_nodes(g) -> FilteredGraph:
    """Keep the vertices lying on a path to an observable non-virtual result."""
    vg = lower(require_stamped(g))
    graph = vg.graph
    preds, indeg, outdeg = _adjacency(graph)  # preds is the transposed graph
    d_nv = sorted(oid for oid, d in graph.data.items() if not d.virtual)
    d_in, d_out = set(), set()
    for v in d_nv:
        if indeg[v] == 0:
            d_in.add(v)
        elif outdeg[v] == 0:
            d_out.add(v)
        else:
            d_in.add(v)
            d_out.add(v)
    alive: set[int] = set()
    steps = 0
    for start in sorted(d_out):
        visited = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            steps += 1
            if v != start and v in d_in:
                continue
            for p in preds[v]:
                steps += 1
                if p not in visited:
                    visited.add(p)
                    stack.append(p)
        alive |= visited
    return FilteredGraph(vg, frozenset(alive), frozenset(d_in), frozenset(d_out), steps)


def keep_all(g) -> FilteredGraph:
    """Identity filter (DCE disabled)."""
    vg = lower(require_stamped(g))
    return FilteredGraph(vg, frozenset(vg.graph.vertices()), frozenset(), frozenset())


# -- transfers ---------------------------------------------------------------


@dataclass(frozen=True)
class Transfer:
    direction: str  # HostToDevice | DeviceToHost
    data: int
    segment: int

    def to_json(self):
        return {"direction": self.direction, "data": self.data, "segment": self.segment}


@dataclass(frozen=True)
class TransferPlan:
    segments: tuple  # tuple of tuples of node ids
    transfers: tuple
    naive: int
    host_exchanges: tuple = ()  # data ids crossing host-side table steps

    @property
    def count(self) -> int:
        return len(self.transfers)

    def to_json(self):
        return {
            "segments": [list(s) for s in self.segments],
            "transfers": [t.to_json() for t in self.transfers],
            "naive": self.naive,
            "host_exchanges": list(self.host_exchanges),
        }


def plan_transfers(fg: FilteredGraph, naive: bool = False) -> TransferPlan:
    """Group alive operator nodes into device segments joined by virtual data."""
    g = fg.view()
    nodes = sorted(g.nodes)
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    prod = g.producers()
    cons = g.consumers()
    for oid, d in g.data.items():
        if not d.virtual:
            continue
        touching = prod.get(oid, []) + [n for n, _ in cons.get(oid, [])]
        for a in touching[1:]:
            ra, rb = find(a), find(touching[0])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for n in nodes:
        groups.setdefault(find(n), []).append(n)
    order = {n: i for i, n in enumerate(topo_sort(g))}
    segments = sorted((tuple(sorted(v, key=order.get)) for v in groups.values()), key=lambda s: order[s[0]])
    transfers = []
    host = set()
    for si, seg in enumerate(segments):
        ins, outs = set(), set()
        for n in seg:
            node = g.nodes[n]
            for _, oid in node.inputs():
                if not g.data[oid].virtual:
                    ins.add(oid)
                elif node.kernel.kind == "table":
                    host.add(oid)
            for _, oid in node.outputs():
                if not g.data[oid].virtual:
                    outs.add(oid)
                elif node.kernel.kind == "table":
                    host.add(oid)
        transfers += [Transfer("HostToDevice", o, si) for o in sorted(ins)]
        transfers += [Transfer("DeviceToHost", o, si) for o in sorted(outs)]
    naive_count = 2 * len(fg.graph.nodes)
    if naive:
        transfers = []
        for si, n in enumerate(topo_sort(fg.graph)):
            node = fg.graph.nodes[n]
            transfers.append(Transfer("HostToDevice", node.inputs()[0][1], si))
            transfers.append(Transfer("DeviceToHost", node.outputs()[0][1], si))
        segments = tuple((n,) for n in topo_sort(fg.graph))
    return TransferPlan(tuple(segments), tuple(transfers), naive_count, tuple(sorted(host)))


# -- fusion ------------------------------------------------------------------


@dataclass(frozen=True)
class FusedKernel:
    members: tuple  # abstraction node ids, producer first
    merged: object  # PointKernel | LocalKernel
    node: int  # id of the node carrying the merged kernel in the fused graph

    def to_json(self):
        return {"members": list(self.members), "kernel": self.merged.name, "node": self.node}


@dataclass
class _Unit:
    id: int
    kernel: object
    inputs: list  # data ids, index = kernel input index
    output: int
    members: list
    reads: dict  # data id -> number of consuming bindings


def _remap(e, old_inputs, new_inputs):
    """Rewrite input indices of ``e`` from ``old_inputs`` order to ``new_inputs`` order."""
    idx = {i: new_inputs.index(d) for i, d in enumerate(old_inputs)}

    def fn(x):
        if isinstance(x, InputPixel):
            return InputPixel(idx[x.index], x.channel)
        if isinstance(x, WindowPixel):
            return WindowPixel(idx[x.index], x.dx, x.dy, x.channel)
        if isinstance(x, Lookup):
            return Lookup(idx[x.index], _remap(x.operand, old_inputs, new_inputs))
        return None

    return rebuild(e, fn) if e is not None else None


def _dedupe(xs):
    out = []
    for x in xs:
        if x not in out:
            out.append(x)
    return out


def _compose_point(p: _Unit, c: _Unit, k: int):
    new_inputs = _dedupe(p.inputs + [d for i, d in enumerate(c.inputs) if i != k])
    pb = [_remap(b, p.inputs, new_inputs) for b in p.kernel.bodies]
    c_in = list(c.inputs)

    def fn(x):
        if isinstance(x, InputPixel) and x.index == k:
            return pb[x.channel]
        if isinstance(x, InputPixel):
            return InputPixel(new_inputs.index(c_in[x.index]), x.channel)
        if isinstance(x, Lookup):
            return Lookup(new_inputs.index(c_in[x.index]), rebuild(x.operand, fn))
        return None

    bodies = tuple(rebuild(b, fn) for b in c.kernel.bodies)
    name = f"{p.kernel.name}+{c.kernel.name}"
    return PointKernel(name, len(new_inputs), bodies), new_inputs


def _append_post(l: _Unit, c: _Unit, k: int):
    lk: LocalKernel = l.kernel
    new_inputs = _dedupe(l.inputs + [d for i, d in enumerate(c.inputs) if i != k])
    tap = _remap(lk.tap_body, l.inputs, new_inputs)
    post = _remap(lk.post_body, l.inputs, new_inputs) if lk.post_body is not None else Acc()
    c_in = list(c.inputs)

    def fn(x):
        if isinstance(x, InputPixel) and x.index == k:
            return post
        if isinstance(x, InputPixel):
            return InputPixel(new_inputs.index(c_in[x.index]), x.channel)
        if isinstance(x, Lookup):
            return Lookup(new_inputs.index(c_in[x.index]), rebuild(x.operand, fn))
        return None

    new_post = rebuild(c.kernel.body, fn)
    merged = LocalKernel(f"{lk.name}+{c.kernel.name}", len(new_inputs), lk.window_w, lk.window_h, tap,
                         lk.combine, new_post, lk.boundary, lk.mask)
    return merged, new_inputs


def _inline_point(p: _Unit, l: _Unit, k: int, descs):
    lk: LocalKernel = l.kernel
    new_inputs = _dedupe([d for i, d in enumerate(l.inputs) if i != k] + p.inputs)
    l_in = list(l.inputs)
    p_in = list(p.inputs)
    centre = [_remap(b, p_in, new_inputs) for b in p.kernel.bodies]

    def at(dx, dy, ch):
        def fn(x):
            if isinstance(x, InputPixel) and descs[p_in[x.index]].kind == DataKind.IMAGE:
                return WindowPixel(new_inputs.index(p_in[x.index]), dx, dy, x.channel)
            if isinstance(x, InputPixel):
                return InputPixel(new_inputs.index(p_in[x.index]), x.channel)
            if isinstance(x, Lookup):
                return Lookup(new_inputs.index(p_in[x.index]), rebuild(x.operand, fn))
            return None

        return rebuild(p.kernel.bodies[ch], fn)

    def fn(x):
        if isinstance(x, WindowPixel) and x.index == k:
            return at(x.dx, x.dy, x.channel)
        if isinstance(x, InputPixel) and x.index == k:
            return centre[x.channel]
        if isinstance(x, (InputPixel, WindowPixel)):
            j = new_inputs.index(l_in[x.index])
            return InputPixel(j, x.channel) if isinstance(x, InputPixel) else WindowPixel(j, x.dx, x.dy, x.channel)
        if isinstance(x, Lookup):
            return Lookup(new_inputs.index(l_in[x.index]), rebuild(x.operand, fn))
        return None

    tap = rebuild(lk.tap_body, fn)
    post = rebuild(lk.post_body, fn) if lk.post_body is not None else None
    merged = LocalKernel(f"{p.kernel.name}+{lk.name}", len(new_inputs), lk.window_w, lk.window_h, tap,
                         lk.combine, post, lk.boundary, lk.mask)
    return merged, new_inputs


@dataclass
class FusedPlan:
    """Result of the pass pipeline; consumed by :func:`execute.run_plan`."""

    verified: VerifiedGraph  # implementation graph
    filtered: FilteredGraph
    transfers: TransferPlan
    fused: Graph
    groups: list = field(default_factory=list)
    order: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        from .ir import kernel_to_json

        launches = []
        for nid in self.order:
            n = self.fused.nodes[nid]
            launches.append({
                "node": nid,
                "kernel": kernel_to_json(n.kernel),
                "inputs": [oid for _, oid in sorted(n.inputs())],
                "output": n.outputs()[0][1],
            })
        return {
            "launches": launches,
            "transfers": self.transfers.to_json(),
            "fused_groups": [g.to_json() for g in self.groups],
            "alive": sorted(self.filtered.alive),
            "stats": self.stats,
        }

    def serialize(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def fuse(fg: FilteredGraph):
    """Aggregate point/local chains joined by single-consumer virtual data.

    Returns ``(fused graph, [FusedKernel])``.
    """
    g = fg.view()
    descs = {oid: d.desc for oid, d in g.data.items()}
    units: dict[int, _Unit] = {}
    for nid in topo_sort(g):
        n = g.nodes[nid]
        reads: dict[int, int] = {}
        for _, o in n.inputs():
            reads[o] = reads.get(o, 0) + 1
        units[nid] = _Unit(nid, n.kernel, [o for _, o in sorted(n.inputs())], n.outputs()[0][1], [nid],
                           reads)
    # consuming bindings per data id (multiplicity matters: Magnitude(a, a) counts twice)
    uses: dict[int, int] = {}
    _recount(uses, units)

    def order():
        prod = {u.output: u.id for u in units.values()}
        succ = {u: set() for u in units}
        for u in units.values():
            for d in u.inputs:
                if d in prod:
                    succ[prod[d]].add(u.id)
        indeg = {u: 0 for u in units}
        for s in succ.values():
            for t in s:
                indeg[t] += 1
        import heapq

        ready = [u for u, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        out = []
        while ready:
            u = heapq.heappop(ready)
            out.append(u)
            for t in succ[u]:
                indeg[t] -= 1
                if indeg[t] == 0:
                    heapq.heappush(ready, t)
        return out

    def try_fuse(c: _Unit):
        prod = {u.output: u for u in units.values()}
        for k, d in enumerate(c.inputs):
            p = prod.get(d)
            if p is None or not g.data[d].virtual or uses.get(d, 0) != 1:
                continue
            pk, ck = p.kernel.kind, c.kernel.kind
            try:
                if pk == "point" and ck == "point":
                    merged, ins = _compose_point(p, c, k)
                elif pk == "local" and ck == "point":
                    if len(c.kernel.bodies) != 1 or p.kernel.boundary.mode == "undefined":
                        continue
                    merged, ins = _append_post(p, c, k)
                elif pk == "point" and ck == "local":
                    if c.kernel.boundary.mode == "constant":
                        continue
                    if not any(descs[x].kind == DataKind.IMAGE for x in p.inputs):
                        continue
                    merged, ins = _inline_point(p, c, k, descs)
                else:
                    continue
                typecheck(merged, [descs[x].format for x in ins], descs[c.output].format)
            except (KernelTypeError, ValueError):
                continue
            return p, merged, ins
        return None

    changed = True
    while changed:
        changed = False
        for uid in order():
            c = units[uid]
            r = try_fuse(c)
            if r is None:
                continue
            p, merged, ins = r
            reads = {d: n for d, n in c.reads.items() if d != p.output}
            for d, n in p.reads.items():
                reads[d] = reads.get(d, 0) + n
            units[c.id] = _Unit(c.id, merged, ins, c.output, p.members + c.members, reads)
            del units[p.id]
            _recount(uses, units)
            changed = True
            break

    fused = Graph(g.id, g.context)
    groups = []
    live_data = set()
    for u in units.values():
        live_data.update(u.inputs)
        live_data.add(u.output)
    fused.data = {oid: d for oid, d in g.data.items() if oid in live_data}
    for uid in order():
        u = units[uid]
        if len(u.members) == 1:
            fused.nodes[uid] = g.nodes[uid]
            fused.provenance[uid] = g.provenance.get(uid, uid)
            continue
        node = fused.add_node(u.kernel, list(u.inputs) + [u.output], strict=False, name=u.kernel.name)
        for m in u.members:
            fused.provenance.setdefault(node.id, g.provenance.get(m, m))
        groups.append(FusedKernel(tuple(u.members), u.kernel, node.id))
    return fused, groups


def _recount(uses, units):
    uses.clear()
    for u in units.values():
        for x, n in u.reads.items():
            uses[x] = uses.get(x, 0) + n


def no_fuse(fg: FilteredGraph):
    return fg.view(), []


def optimize(g, *, dce: bool = True, fusion: bool = True) -> FusedPlan:
    """Run verify -> expand -> DCE -> transfer planning -> fusion."""
    from .verify import verify

    vg = g if isinstance(g, VerifiedGraph) else verify(g)
    impl = lower(vg)
    fg = eliminate_dead_nodes(impl) if dce else keep_all(impl)
    tp = plan_transfers(fg)
    fused, groups = fuse(fg) if fusion else no_fuse(fg)
    order = topo_sort(fused)
    stats = {
        "nodes_before": len(impl.graph.nodes),
        "nodes_alive": len(fg.nodes),
        "nodes_removed": len(impl.graph.nodes) - len(fg.nodes),
        "transfers_naive": tp.naive,
        "transfers_optimized": tp.count,
        "fused_groups": len(groups),
        "launches_before": sum(1 for n in impl.graph.nodes.values() if n.kernel.kind != "table"),
        "launches_after": sum(1 for n in fused.nodes.values() if n.kernel.kind != "table"),
    }
    return FusedPlan(impl, fg, tp, fused, groups, order, stats)
