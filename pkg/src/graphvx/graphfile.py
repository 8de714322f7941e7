"""JSON graph description files: loading, canonical dumping, shipped corpus."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .formats import DataKind, Format
from .graph import Context, DataObject, Graph
from .ir import ExprSyntaxError, kernel_from_json, kernel_to_json


class GraphFileError(Exception):
    """Schema or reference error in a graph file."""


@dataclass
class LoadedGraph:
    context: Context
    graph: Graph
    objects: dict  # name -> DataObject
    custom: dict  # name -> AbstractionKernel
    outputs: list
    size: tuple | None = None
    meta: dict = field(default_factory=dict)

    def obj(self, name: str) -> DataObject:
        return self.objects[name]


_TOP_KEYS = {"images", "scalars", "matrices", "arrays", "distributions", "nodes", "custom_kernels", "outputs",
             "size", "description", "name"}


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise GraphFileError(f"{where}: missing key {key!r}")
    return d[key]


def _fmt(v, where) -> Format:
    try:
        return Format(v)
    except ValueError:
        raise GraphFileError(f"{where}: unknown format {v!r}") from None


def load_doc(doc: dict, size: tuple | None = None) -> LoadedGraph:
    """Build a context and graph from a parsed graph document."""
    if not isinstance(doc, dict):
        raise GraphFileError("graph file must be a JSON object")
    extra = set(doc) - _TOP_KEYS
    if extra:
        raise GraphFileError(f"unknown top-level keys {sorted(extra)}")
    default = tuple(doc.get("size") or ()) or None
    if size is not None:
        default = tuple(size)
    ctx = Context()
    g = ctx.create_graph()
    objs: dict[str, DataObject] = {}

    def add(name, obj, where):
        if not isinstance(name, str) or not name:
            raise GraphFileError(f"{where}: name must be a non-empty string")
        if name in objs:
            raise GraphFileError(f"{where}: duplicate name {name!r}")
        obj.name = name
        objs[name] = obj

    try:
        for i, im in enumerate(doc.get("images", [])):
            where = f"images[{i}]"
            name = _need(im, "name", where)
            if im.get("virtual", False):
                # virtual dims/format are optional hints
                fmt = _fmt(im.get("format", "UNRESOLVED"), where)
                obj = g.create_virtual_image(int(im.get("width", 0)), int(im.get("height", 0)), fmt)
            else:
                w = im.get("width", default[0] if default else 0)
                h = im.get("height", default[1] if default else 0)
                obj = ctx.create_image(int(w), int(h), _fmt(_need(im, "format", where), where))
            add(name, obj, where)
        for i, sc in enumerate(doc.get("scalars", [])):
            where = f"scalars[{i}]"
            if sc.get("virtual", False):
                raise GraphFileError(f"{where}: only images may be virtual")
            add(_need(sc, "name", where), ctx.create_scalar(_fmt(_need(sc, "format", where), where),
                                                             sc.get("value")), where)
        for i, m in enumerate(doc.get("matrices", [])):
            where = f"matrices[{i}]"
            add(_need(m, "name", where), ctx.create_matrix(int(_need(m, "rows", where)), int(_need(m, "cols", where)),
                                                           _fmt(_need(m, "format", where), where), m.get("values")),
                where)
        for i, a in enumerate(doc.get("arrays", [])):
            where = f"arrays[{i}]"
            add(_need(a, "name", where), ctx.create_array(int(_need(a, "capacity", where)),
                                                          _fmt(a.get("format", "COORD"), where)), where)
        for i, d in enumerate(doc.get("distributions", [])):
            where = f"distributions[{i}]"
            add(_need(d, "name", where), ctx.create_distribution(int(_need(d, "bins", where)), int(d.get("offset", 0)),
                                                                 int(_need(d, "range", where))), where)
    except (ValueError, TypeError) as exc:
        raise GraphFileError(str(exc)) from exc
    except Exception as exc:  # graph-core construction errors
        if type(exc).__name__ in ("ZeroDimension", "BadFormat"):
            raise GraphFileError(str(exc)) from exc
        raise

    custom = {}
    for i, kj in enumerate(doc.get("custom_kernels", [])):
        where = f"custom_kernels[{i}]"
        try:
            k = kernel_from_json(kj)
        except (KeyError, ExprSyntaxError, ValueError, TypeError) as exc:
            raise GraphFileError(f"{where}: {exc}") from exc
        if k.name in custom:
            raise GraphFileError(f"{where}: duplicate kernel {k.name!r}")
        custom[k.name] = k

    for i, nd in enumerate(doc.get("nodes", [])):
        where = f"nodes[{i}]"
        kname = _need(nd, "kernel", where)
        kernel = custom.get(kname, kname)
        params = []
        for p in _need(nd, "params", where):
            if p is None:
                params.append(None)
            elif p in objs:
                params.append(objs[p])
            else:
                raise GraphFileError(f"{where}: parameter {p!r} is not declared")
        g.add_node(kernel, params, nd.get("attrs") or {}, strict=False, name=nd.get("name"))

    outputs = list(doc.get("outputs", []))
    for o in outputs:
        if o not in objs:
            raise GraphFileError(f"outputs: {o!r} is not declared")
        if objs[o].virtual:
            raise GraphFileError(f"outputs: {o!r} is virtual")
    meta = {k: doc[k] for k in ("name", "description") if k in doc}
    return LoadedGraph(ctx, g, objs, custom, outputs, default, meta)


def corpus_dir():
    return resources.files("graphvx") / "corpus"


def corpus_names() -> list[str]:
    return sorted(p.name[:-5] for p in corpus_dir().iterdir() if p.name.endswith(".json"))


def resolve(path: str) -> str:
    """A file path, or the shipped corpus file of that name."""
    if os.path.exists(path):
        return path
    stem = os.path.basename(path)
    stem = stem[:-5] if stem.endswith(".json") else stem
    cand = corpus_dir() / f"{stem}.json"
    if cand.is_file():
        return str(cand)
    raise FileNotFoundError(path)


def load(path: str, size: tuple | None = None) -> LoadedGraph:
    with open(resolve(path)) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphFileError(f"invalid JSON: {exc}") from exc
    return load_doc(doc, size)


def _value(v):
    if v is None:
        return None
    a = np.asarray(v)
    return a.tolist()


def to_doc(lg: LoadedGraph) -> dict:
    """Document describing the loaded graph (independent of the source text)."""
    g = lg.graph
    names = {o.id: n for n, o in lg.objects.items()}
    doc: dict = {"images": [], "scalars": [], "matrices": [], "arrays": [], "distributions": []}
    for name, o in lg.objects.items():
        d = o.desc
        if d.kind == DataKind.IMAGE:
            e = {"name": name, "format": d.format.value, "virtual": o.virtual}
            if d.width or not o.virtual:
                e.update(width=d.width, height=d.height)
            doc["images"].append(e)
        elif d.kind == DataKind.SCALAR:
            doc["scalars"].append({"name": name, "format": d.format.value, "value": _value(o.value)})
        elif d.kind == DataKind.MATRIX:
            doc["matrices"].append({"name": name, "rows": d.rows, "cols": d.cols, "format": d.format.value,
                                    "values": _value(o.value)})
        elif d.kind == DataKind.ARRAY:
            doc["arrays"].append({"name": name, "capacity": d.capacity, "format": d.format.value})
        else:
            doc["distributions"].append({"name": name, "bins": d.bins, "offset": d.offset, "range": d.range})
    doc = {k: v for k, v in doc.items() if v}
    if lg.custom:
        doc["custom_kernels"] = [kernel_to_json(k) for k in lg.custom.values()]
    nodes = []
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        sig = n.signature
        width = max([i + 1 for i, _ in n.bindings] + [len(sig) if sig else 0])
        params = [None] * width
        for i, oid in n.bindings:
            params[i] = names.get(oid, oid)
        while params and params[-1] is None:
            params.pop()
        e = {"kernel": n.kernel_name, "params": params}
        if n.attrs:
            e["attrs"] = n.attrs
        if n.name:
            e["name"] = n.name
        nodes.append(e)
    doc["nodes"] = nodes
    doc["outputs"] = list(lg.outputs)
    doc.update(lg.meta)
    return doc


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def dumps(lg: LoadedGraph) -> str:
    return canonical_json(to_doc(lg))
