"""Graph verification: parameter checks, connectivity, format resolution."""
from __future__ import annotations

from dataclasses import dataclass

from . import ir
from .cvlib import REGISTRY, InferError
from .formats import DataKind, Desc, Format
from .graph import DataObject, Graph, topo_sort, CycleDetected

CODES = (
    "CycleDetected",
    "NotBipartite",
    "UnboundParam",
    "DirectionMismatch",
    "FormatMismatch",
    "MultipleWriters",
    "UnresolvedVirtualFormat",
    "UnknownKernel",
)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    subjects: tuple
    message: str

    def __post_init__(self):
        assert self.code in CODES, self.code

    @property
    def subject(self) -> int:
        return self.subjects[0] if self.subjects else 0

    def render(self) -> str:
        return f"{self.code} object#{self.subject}: {self.message}"

    def sort_key(self):
        return (self.code, self.subject, self.message)


class VerificationError(Exception):
    def __init__(self, diagnostics):
        self.diagnostics = sorted(diagnostics, key=Diagnostic.sort_key)
        super().__init__("\n".join(d.render() for d in self.diagnostics))


class UnstampedGraph(Exception):
    """The graph changed after verification (or was never verified)."""


@dataclass(frozen=True)
class VerifiedGraph:
    """Resolved snapshot of a graph plus the version it was taken at."""

    graph: Graph
    stamp: int
    source: Graph

    @property
    def is_application(self) -> bool:
        return any(not n.is_abstraction for n in self.graph.nodes.values())

    def check(self) -> None:
        if self.source.version != self.stamp:
            raise UnstampedGraph(f"graph {self.source.id} was modified after verification")


def require_stamped(g) -> VerifiedGraph:
    if not isinstance(g, VerifiedGraph):
        raise UnstampedGraph("expected a verified graph")
    g.check()
    return g


def render(diags) -> str:
    return "\n".join(d.render() for d in sorted(diags, key=Diagnostic.sort_key))


def _kernel_code(exc: ir.KernelTypeError) -> str:
    return "UnresolvedVirtualFormat" if isinstance(exc, ir.MissingDims) else "FormatMismatch"


def diagnose(g: Graph) -> tuple[list[Diagnostic], dict[int, Desc]]:
    """All diagnostics of ``g`` and the resolved descriptor of every data object."""
    if isinstance(g, VerifiedGraph):
        g = g.graph
    diags: list[Diagnostic] = []

    def err(code, subjects, msg):
        diags.append(Diagnostic(code, tuple(subjects), msg))

    descs: dict[int, Desc] = {d.id: d.desc for d in g.data.values()}
    broken: set[int] = set()  # nodes excluded from propagation
    writers: dict[int, list[int]] = {}
    readers: dict[int, list[int]] = {}

    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        sig = node.signature
        if sig is None:
            err("UnknownKernel", [nid], f"unknown kernel {node.kernel_name!r}")
            broken.add(nid)
            continue
        seen_idx = set()
        for i, oid in node.bindings:
            if i < 0 or i >= len(sig):
                err("UnboundParam", [nid], f"{node.label}: parameter index {i} outside signature of {len(sig)}")
                broken.add(nid)
                continue
            if i in seen_idx:
                err("UnboundParam", [nid], f"{node.label}: parameter {sig[i].name} bound twice")
                broken.add(nid)
            seen_idx.add(i)
            obj = g.obj(oid)
            if not isinstance(obj, DataObject):
                err("NotBipartite", [nid, oid], f"{node.label}: parameter {sig[i].name} bound to non-data object {oid}")
                broken.add(nid)
                continue
            if obj.virtual and obj.owner != g.id:
                err("NotBipartite", [oid, nid], f"virtual object {oid} belongs to graph {obj.owner}")
                broken.add(nid)
            p = sig[i]
            if p.kind is not None and obj.kind != p.kind:
                err("FormatMismatch", [nid, oid],
                    f"{node.label}: parameter {p.name} expects {p.kind}, got {obj.kind} object {oid}")
                broken.add(nid)
            (writers if p.direction == ir.Direction.OUTPUT else readers).setdefault(oid, []).append(nid)
        for i, p in enumerate(sig.params):
            if p.required and i not in seen_idx:
                err("UnboundParam", [nid], f"{node.label}: required parameter {p.name} is unbound")
                broken.add(nid)

    for oid, ws in sorted(writers.items()):
        if len(set(ws)) > 1 or len(ws) > 1:
            err("MultipleWriters", [oid], f"object {oid} written by nodes {sorted(ws)}")
            broken.update(ws)

    for oid in sorted(g.data):
        d = g.data[oid]
        if not d.virtual or d.owner != g.id:  # foreign virtuals already reported
            continue
        if oid in readers and oid not in writers:
            err("DirectionMismatch", [oid], f"virtual {d.label} is read by {sorted(set(readers[oid]))} but never written")
        elif oid not in readers and oid not in writers and not d.desc.resolved:
            err("UnresolvedVirtualFormat", [oid], f"virtual {d.label} is not connected to any node")

    try:
        order = topo_sort(g)
    except CycleDetected as exc:
        err("CycleDetected", exc.subjects, str(exc))
        stuck = set(exc.subjects)
        order = [n for n in _partial_order(g) if n not in stuck]
        broken |= stuck

    failed: set[int] = set(broken)
    resolved_by: dict[int, int] = {}
    for nid in order:
        node = g.nodes[nid]
        if nid in failed:
            continue
        ins = {}
        ok = True
        for i, oid in node.inputs():
            obj = g.data[oid]
            if not descs[oid].resolved or (obj.virtual and oid in writers and writers[oid][0] in failed):
                ok = False
                break
            ins[i] = descs[oid]
        if not ok:
            failed.add(nid)  # upstream problem already reported
            continue
        produced = _infer_node(g, node, ins, descs, err, resolved_by)
        if produced is None:
            failed.add(nid)
            continue
        for i, oid in node.outputs():
            new = produced.get(i)
            if new is None:
                continue
            obj = g.data[oid]
            old = obj.desc
            if obj.virtual:
                if old.format not in (Format.UNRESOLVED, new.format) or (
                    old.kind == DataKind.IMAGE and old.width and (old.width, old.height) != (new.width, new.height)
                ):
                    err("FormatMismatch", [oid, nid],
                        f"virtual {obj.label}: declared {_show(old)} but {node.label} produces {_show(new)}")
                    failed.add(nid)
                    continue
                descs[oid] = new
            elif old != new:
                err("FormatMismatch", [oid, nid], f"{obj.label}: is {_show(old)} but {node.label} produces {_show(new)}")
                failed.add(nid)
                continue
            resolved_by[oid] = nid

    for oid in sorted(g.data):
        d = g.data[oid]
        if d.virtual and oid in writers and not descs[oid].resolved:
            wnode = writers[oid][0]
            if wnode not in failed:
                err("UnresolvedVirtualFormat", [oid], f"virtual {d.label} could not be resolved")

    return _dedupe(diags), descs


def _dedupe(diags):
    seen, out = set(), []
    for d in diags:
        if d not in seen:
            seen.add(d)
            out.append(d)
    return out


def _show(d: Desc) -> str:
    if d.kind == DataKind.IMAGE:
        return f"{d.width}x{d.height} {d.format}"
    return f"{d.kind.value.lower()} {d.format}"


def _partial_order(g: Graph) -> list[int]:
    """Topological prefix that excludes nodes on or behind a cycle."""
    from .graph import node_successors

    succ = node_successors(g)
    indeg = {n: 0 for n in succ}
    for s in succ.values():
        for t in s:
            indeg[t] += 1
    ready = sorted(n for n, d in indeg.items() if d == 0)
    out = []
    while ready:
        n = ready.pop(0)
        out.append(n)
        for t in sorted(succ[n]):
            indeg[t] -= 1
            if indeg[t] == 0:
                ready.append(t)
        ready.sort()
    return out


def _values(g: Graph, node, ins_by_name) -> dict:
    vals = {}
    for i, oid in node.inputs():
        obj = g.data[oid]
        if not obj.virtual and obj.value is not None and obj.kind in (DataKind.SCALAR, DataKind.MATRIX):
            v = obj.value
            vals[node.signature[i].name] = v.item() if getattr(v, "ndim", 1) == 0 else v
    return vals


def _infer_node(g: Graph, node, ins: dict[int, Desc], descs, err, resolved_by) -> dict[int, Desc] | None:
    sig = node.signature
    for i, d in ins.items():
        p = sig[i]
        if p.formats is not None and d.format not in p.formats:
            oid = node.bound(i)
            src = resolved_by.get(oid)
            who = f" (produced by node {src})" if src is not None else ""
            err("FormatMismatch", [node.id, oid] + ([src] if src is not None else []),
                f"{node.label}: parameter {p.name} does not accept {d.format} from {g.data[oid].label}{who}")
            return None
    if node.is_abstraction:
        k = node.kernel
        outs = node.outputs()
        declared = descs[outs[0][1]] if outs else None
        try:
            ordered = [ins[i] for i in range(k.arity)]
            d = ir.infer(k, ordered, declared)
        except ir.KernelTypeError as exc:
            err(_kernel_code(exc), [node.id], f"{node.label}: {exc}")
            return None
        return {outs[0][0]: d} if outs else {}
    entry = REGISTRY[node.kernel]
    by_name = {sig[i].name: d for i, d in ins.items()}
    declared = {sig[i].name: descs[oid] for i, oid in node.outputs()}
    try:
        res = entry.infer(by_name, declared, node.attrs, _values(g, node, by_name))
    except InferError as exc:
        err(exc.code, [node.id], f"{node.label}: {exc}")
        return None
    return {sig.index(name): d for name, d in res.items()}


def verify(g) -> VerifiedGraph:
    """Verify ``g``; raise :class:`VerificationError` with every diagnostic on failure."""
    source = g.source if isinstance(g, VerifiedGraph) else g
    graph = g.graph if isinstance(g, VerifiedGraph) else g
    diags, descs = diagnose(graph)
    if diags:
        raise VerificationError(diags)
    snap = graph.copy()
    for oid, d in snap.data.items():
        d.desc = descs[oid]
    return VerifiedGraph(snap, source.version, source)


def lower(g) -> VerifiedGraph:
    """Verify, expand vision functions into abstraction nodes and re-verify."""
    from .cvlib import expand

    vg = g if isinstance(g, VerifiedGraph) else verify(g)
    vg.check()
    if not vg.is_application:
        return vg
    impl = expand(vg)
    out = verify(impl)
    # tie the implementation snapshot to the application graph's version
    return VerifiedGraph(out.graph, vg.stamp, vg.source)
