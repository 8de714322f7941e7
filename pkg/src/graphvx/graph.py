"""Context, data objects, operator nodes and the bipartite application graph."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import formats as F
from .formats import DataKind, Desc, Format
from .ir import AbstractionKernel, Direction, KernelSignature


class GraphError(Exception):
    code = "GraphError"

    def __init__(self, message: str, subjects: Sequence[int] = ()):
        super().__init__(message)
        self.subjects = tuple(subjects)


class ZeroDimension(GraphError):
    code = "ZeroDimension"


class BadFormat(GraphError):
    code = "BadFormat"


class UnknownKernel(GraphError):
    code = "UnknownKernel"


class CrossGraphVirtual(GraphError):
    code = "CrossGraphVirtual"


class MultipleWriters(GraphError):
    code = "MultipleWriters"


class BadBinding(GraphError):
    code = "BadBinding"


class CycleDetected(GraphError):
    code = "CycleDetected"


class AccessDenied(GraphError):
    code = "AccessDenied"


@dataclass
class DataObject:
    id: int
    desc: Desc
    virtual: bool
    owner: int
    name: str | None = None
    # host contents of non-virtual objects; scalars/matrices use it as the default input
    value: Any = None

    @property
    def kind(self) -> DataKind:
        return self.desc.kind

    @property
    def format(self) -> Format:
        return self.desc.format

    @property
    def width(self) -> int:
        return self.desc.width

    @property
    def height(self) -> int:
        return self.desc.height

    @property
    def label(self) -> str:
        return self.name or f"{self.kind.value.lower()}{self.id}"


@dataclass
class OperatorNode:
    id: int
    kernel: str | AbstractionKernel
    bindings: tuple  # ((param index, object id), ...)
    graph: int
    signature: KernelSignature | None
    attrs: dict = field(default_factory=dict)
    name: str | None = None

    @property
    def kernel_name(self) -> str:
        return self.kernel if isinstance(self.kernel, str) else self.kernel.name

    @property
    def label(self) -> str:
        return self.name or f"{self.kernel_name}#{self.id}"

    @property
    def is_abstraction(self) -> bool:
        return isinstance(self.kernel, AbstractionKernel)

    def bound(self, index: int) -> int | None:
        for i, oid in self.bindings:
            if i == index:
                return oid
        return None

    def _by_direction(self, d: Direction) -> list[tuple[int, int]]:
        if self.signature is None:
            return []
        n = len(self.signature)
        return [(i, oid) for i, oid in self.bindings if 0 <= i < n and self.signature[i].direction == d]

    def inputs(self) -> list[tuple[int, int]]:
        return self._by_direction(Direction.INPUT)

    def outputs(self) -> list[tuple[int, int]]:
        return self._by_direction(Direction.OUTPUT)


def signature_for(kernel) -> KernelSignature | None:
    if isinstance(kernel, AbstractionKernel):
        return kernel.signature()
    from .cvlib import REGISTRY

    entry = REGISTRY.get(kernel)
    return entry.signature if entry is not None else None


class Context:
    """Owns every graph and data object; releasing it frees them all."""

    def __init__(self):
        self.objects: dict[int, Any] = {}
        self.next_id = 1
        self.id = 0

    def _new_id(self) -> int:
        i = self.next_id
        self.next_id += 1
        return i

    def _register(self, obj):
        self.objects[obj.id] = obj
        return obj

    def create_graph(self) -> "Graph":
        return self._register(Graph(self._new_id(), self))

    def create_image(self, width: int, height: int, fmt: Format, name: str | None = None) -> DataObject:
        if width < 1 or height < 1:
            raise ZeroDimension(f"image dimensions must be >= 1, got {width}x{height}")
        fmt = Format(fmt)
        if fmt == Format.UNRESOLVED or fmt not in (F.STORAGE | {Format.RGB, Format.UYVY}):
            raise BadFormat(f"non-virtual image needs a concrete format, got {fmt}")
        return self._register(DataObject(self._new_id(), F.image(width, height, fmt), False, self.id, name))

    def create_scalar(self, fmt: Format, value=None, name: str | None = None) -> DataObject:
        fmt = Format(fmt)
        if fmt not in F.STORAGE:
            raise BadFormat(f"bad scalar format {fmt}")
        return self._register(DataObject(self._new_id(), F.scalar(fmt), False, self.id, name, value))

    def create_array(self, capacity: int, fmt: Format, name: str | None = None, value=None) -> DataObject:
        if capacity < 1:
            raise ZeroDimension("array capacity must be >= 1")
        return self._register(DataObject(self._new_id(), F.array(capacity, fmt), False, self.id, name, value))

    def create_matrix(self, rows: int, cols: int, fmt: Format, values=None, name: str | None = None) -> DataObject:
        if rows < 1 or cols < 1:
            raise ZeroDimension("matrix dimensions must be >= 1")
        fmt = Format(fmt)
        if values is not None:
            values = np.asarray(values, dtype=F.DTYPE[fmt]).reshape(rows, cols)
        return self._register(DataObject(self._new_id(), F.matrix(rows, cols, fmt), False, self.id, name, values))

    def create_distribution(self, bins: int, offset: int, rng: int, name: str | None = None) -> DataObject:
        if bins < 1 or rng < 1:
            raise ZeroDimension("distribution needs bins >= 1 and range >= 1")
        return self._register(DataObject(self._new_id(), F.distribution(bins, offset, rng), False, self.id, name))

    # host access API: virtual objects are not reachable from here
    def read(self, obj: DataObject):
        if obj.virtual:
            raise AccessDenied(f"virtual object {obj.id} cannot be read", [obj.id])
        return obj.value

    def write(self, obj: DataObject, value) -> None:
        if obj.virtual:
            raise AccessDenied(f"virtual object {obj.id} cannot be written", [obj.id])
        obj.value = value

    def release(self) -> None:
        for obj in self.objects.values():
            if isinstance(obj, Graph):
                obj.nodes.clear()
                obj.data.clear()
        self.objects.clear()

    def __len__(self):
        return len(self.objects)


class Graph:
    """Bipartite DAG of data objects and operator nodes.

    Edges are never stored: they follow from node bindings and kernel
    signatures (INPUT binding gives data->node, OUTPUT gives node->data).
    """

    def __init__(self, gid: int, context: Context):
        self.id = gid
        self.context = context
        self.nodes: dict[int, OperatorNode] = {}
        self.data: dict[int, DataObject] = {}
        self.version = 0
        self.provenance: dict[int, int] = {}

    # -- construction ------------------------------------------------------

    def create_virtual_image(self, width: int = 0, height: int = 0, fmt: Format = Format.UNRESOLVED,
                             name: str | None = None) -> DataObject:
        return self.create_virtual(F.image(width, height, Format(fmt)), name)

    def create_virtual(self, desc: Desc, name: str | None = None) -> DataObject:
        obj = DataObject(self.context._new_id(), desc, True, self.id, name)
        self.context._register(obj)
        self.data[obj.id] = obj
        self.version += 1
        return obj

    def _normalize(self, sig: KernelSignature | None, bindings) -> list[tuple[int, int]]:
        def oid(x):
            return x.id if hasattr(x, "id") else int(x)

        if isinstance(bindings, Mapping):
            if sig is None:
                raise UnknownKernel("named bindings need a known kernel")
            pairs = [(sig.index(k) if isinstance(k, str) else int(k), v) for k, v in bindings.items()]
        else:
            pairs = list(enumerate(bindings))
        return sorted((i, oid(v)) for i, v in pairs if v is not None)

    def add_node(self, kernel, bindings, attrs: dict | None = None, *, strict: bool = True,
                 name: str | None = None) -> OperatorNode:
        """Add an operator node.

        ``bindings`` is either a list aligned with the kernel signature
        (None for unbound optional parameters) or a mapping from parameter
        name/index to data object.  With ``strict=False`` the node is
        inserted as-is so that the verifier can report every problem.
        """
        sig = signature_for(kernel)
        pairs = self._normalize(sig, bindings)
        if strict:
            if sig is None:
                raise UnknownKernel(f"unknown kernel {kernel!r}")
            producers = self.producers()
            for i, o in pairs:
                if i >= len(sig):
                    raise BadBinding(f"{kernel}: parameter index {i} does not exist")
                obj = self.context.objects.get(o)
                if not isinstance(obj, DataObject):
                    raise BadBinding(f"object {o} is not a data object in this context", [o])
                if obj.virtual and obj.owner != self.id:
                    raise CrossGraphVirtual(f"virtual object {o} belongs to graph {obj.owner}", [o])
                if sig[i].direction == Direction.OUTPUT and producers.get(o):
                    raise MultipleWriters(f"object {o} already produced by node {producers[o][0]}", [o])
            outs = [o for i, o in pairs if sig[i].direction == Direction.OUTPUT]
            if len(outs) != len(set(outs)):
                raise MultipleWriters("node writes the same object twice", outs)
        node = OperatorNode(self.context._new_id(), kernel, tuple(pairs), self.id, sig, dict(attrs or {}), name)
        self.context._register(node)
        self.nodes[node.id] = node
        for _, o in pairs:
            obj = self.context.objects.get(o)
            if isinstance(obj, DataObject) and o not in self.data:
                self.data[o] = obj
        self.version += 1
        return node

    # -- derived structure -------------------------------------------------

    def obj(self, oid: int):
        if oid in self.data:
            return self.data[oid]
        if oid in self.nodes:
            return self.nodes[oid]
        return self.context.objects.get(oid)

    def is_data(self, vid: int) -> bool:
        return isinstance(self.obj(vid), DataObject)

    def edges(self) -> set[tuple[int, int]]:
        es = set()
        for n in self.nodes.values():
            for _, o in n.inputs():
                es.add((o, n.id))
            for _, o in n.outputs():
                es.add((n.id, o))
        return es

    def vertices(self) -> set[int]:
        return set(self.nodes) | set(self.data)

    def producers(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for n in sorted(self.nodes.values(), key=lambda n: n.id):
            for _, o in n.outputs():
                out.setdefault(o, []).append(n.id)
        return out

    def consumers(self) -> dict[int, list[tuple[int, int]]]:
        """data id -> [(node id, param index)], one entry per consuming binding."""
        out: dict[int, list[tuple[int, int]]] = {}
        for n in sorted(self.nodes.values(), key=lambda n: n.id):
            for i, o in n.inputs():
                out.setdefault(o, []).append((n.id, i))
        return out

    def copy(self) -> "Graph":
        g = Graph(self.id, self.context)
        g.nodes = {k: replace(n, attrs=dict(n.attrs)) for k, n in self.nodes.items()}
        g.data = {k: replace(d) for k, d in self.data.items()}
        g.provenance = dict(self.provenance)
        g.version = self.version
        return g

    def __repr__(self):
        return f"<Graph {self.id}: {len(self.nodes)} nodes, {len(self.data)} data>"


def node_successors(g: Graph) -> dict[int, set[int]]:
    """Operator-level dependency relation (producer node -> consumer nodes)."""
    prod = g.producers()
    succ = {nid: set() for nid in g.nodes}
    for n in g.nodes.values():
        for _, o in n.inputs():
            for p in prod.get(o, ()):
                succ[p].add(n.id)
        for _, o in n.outputs():
            if o in g.nodes:  # malformed node->node edge
                succ[n.id].add(o)
    return succ


def topo_sort(g: Graph) -> list[int]:
    """Node ids with producers before consumers, ties broken by ascending id."""
    succ = node_successors(g)
    indeg = {n: 0 for n in succ}
    for s in succ.values():
        for t in s:
            indeg[t] += 1
    ready = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for t in succ[n]:
            indeg[t] -= 1
            if indeg[t] == 0:
                heapq.heappush(ready, t)
    if len(order) != len(succ):
        stuck = sorted(n for n, d in indeg.items() if d > 0)
        raise CycleDetected(f"cycle through nodes {stuck}", stuck)
    return order


def create_image(ctx: Context, width: int, height: int, fmt: Format, name: str | None = None) -> DataObject:
    return ctx.create_image(width, height, fmt, name)


def create_virtual_image(g: Graph, width: int = 0, height: int = 0, fmt: Format = Format.UNRESOLVED,
                         name: str | None = None) -> DataObject:
    return g.create_virtual_image(width, height, fmt, name)


def add_node(g: Graph, kernel, bindings, attrs: dict | None = None, **kw) -> OperatorNode:
    return g.add_node(kernel, bindings, attrs, **kw)


def iter_data(g: Graph, objs: Iterable[int]) -> list[DataObject]:
    return [g.data[o] for o in objs if o in g.data]
