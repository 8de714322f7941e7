"""``graphvx`` command-line front end.

Exit status: 0 success, 1 diagnostics (verification or runtime faults),
2 I/O or schema errors.  Log verbosity comes from ``GRAPHVX_LOG``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import codegen, execute, graphfile, imageio, optimize as opt, verify as ver
from .formats import DataKind
from .ir import DivByZero

log = logging.getLogger("graphvx")

_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def setup_logging() -> None:
    want = os.environ.get("GRAPHVX_LOG", "quiet").strip().lower()
    level = _LEVELS.get(want)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("graphvx %(levelname)s: %(message)s"))
    log.handlers[:] = [handler]
    log.propagate = False
    log.setLevel(level if level is not None else logging.WARNING)
    if level is None:
        log.warning("GRAPHVX_LOG=%r not understood; using quiet", want)


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _load(args) -> graphfile.LoadedGraph:
    try:
        lg = graphfile.load(args.graph, args.size)
    except FileNotFoundError as exc:
        raise _Fail(2, f"cannot open graph file {exc.args[0] if exc.args else args.graph}") from exc
    except OSError as exc:
        raise _Fail(2, f"cannot read {args.graph}: {exc}") from exc
    except graphfile.GraphFileError as exc:
        raise _Fail(2, f"{args.graph}: {exc}") from exc
    log.info("loaded %s: %d nodes, %d data objects", args.graph, len(lg.graph.nodes), len(lg.graph.data))
    return lg


def _stem(path: str) -> str:
    base = os.path.basename(path)
    return base[:-5] if base.endswith(".json") else base


def _out_dir(args, suffix: str) -> str:
    d = args.out_dir or f"{_stem(args.graph)}.{suffix}"
    os.makedirs(d, exist_ok=True)
    return d


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def _optimize(lg, dce=True, fusion=True) -> opt.FusedPlan:
    return opt.optimize(ver.verify(lg.graph), dce=dce, fusion=fusion)


# -- subcommands -------------------------------------------------------------


def cmd_verify(args) -> int:
    lg = _load(args)
    diags, _ = ver.diagnose(lg.graph)
    for d in diags:
        print(d.render())
    if diags:
        return 1
    print(f"ok: {len(lg.graph.nodes)} nodes, {len(lg.graph.data)} data objects")
    return 0


def cmd_optimize(args) -> int:
    lg = _load(args)
    plan = _optimize(lg, dce=not args.no_dce, fusion=not args.no_fuse)
    d = _out_dir(args, "out")
    _write(os.path.join(d, "stats.json"), graphfile.canonical_json(plan.stats))
    _write(os.path.join(d, "plan.json"), graphfile.canonical_json(plan.to_json()))
    _write(os.path.join(d, "0_application.dot"), codegen.emit_dot(lg.graph, "application"))
    _write(os.path.join(d, "1_implementation.dot"), codegen.emit_dot(plan.verified, "implementation"))
    _write(os.path.join(d, "2_dce.dot"), codegen.emit_dot(plan.filtered, "dce"))
    _write(os.path.join(d, "3_fused.dot"), codegen.emit_dot(plan, "fused"))
    print(graphfile.canonical_json(plan.stats), end="")
    return 0


def cmd_stats(args) -> int:
    lg = _load(args)
    plan = _optimize(lg)
    print(graphfile.canonical_json({"graph": lg.meta.get("name", _stem(args.graph)), "stats": plan.stats,
                                    "transfers": plan.transfers.to_json()}), end="")
    return 0


def _read_inputs(lg, pairs) -> dict:
    given = {}
    for item in pairs or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise _Fail(2, f"--input expects name=file, got {item!r}")
        if name not in lg.objects:
            raise _Fail(2, f"--input: no data object named {name!r}")
        obj = lg.objects[name]
        if obj.desc.kind != DataKind.IMAGE:
            raise _Fail(2, f"--input: {name!r} is not an image")
        try:
            arr, fmt = imageio.read_image(path)
        except OSError as exc:
            raise _Fail(2, f"cannot read {path}: {exc}") from exc
        except (imageio.ImageFormatError, ValueError) as exc:
            raise _Fail(2, f"{path}: {exc}") from exc
        if fmt != obj.desc.format or arr.shape[:2] != (obj.desc.height, obj.desc.width):
            raise _Fail(2, f"{path}: {fmt.value} {arr.shape[1]}x{arr.shape[0]} does not match {name} "
                           f"({obj.desc.format.value} {obj.desc.width}x{obj.desc.height})")
        given[obj.id] = arr
    return given


def _save_outputs(report, lg, d: str) -> list[str]:
    written = []
    for oid, arr in report.outputs.items():
        obj = report.labels.get(oid, str(oid))
        desc = next((o.desc for o in lg.objects.values() if o.id == oid), None)
        if desc is None or desc.kind != DataKind.IMAGE:
            path = os.path.join(d, f"{obj}.json")
            _write(path, graphfile.canonical_json(np.asarray(arr).tolist()))
        else:
            path = os.path.join(d, obj + imageio.extension(desc.format))
            imageio.write_image(path, arr, desc.format)
            log.info("wrote %s", path)
        written.append(path)
    return written


def cmd_run(args) -> int:
    lg = _load(args)
    inputs = _read_inputs(lg, args.input)
    randoms = execute.random_inputs(lg.graph, args.seed)
    for oid, arr in randoms.items():
        if oid not in inputs:
            log.info("input %s: random data (seed %d)", lg.graph.data[oid].label, args.seed)
            inputs[oid] = arr
    if args.naive:
        report = execute.run_naive(ver.verify(lg.graph), inputs)
    else:
        report = execute.run_plan(_optimize(lg), inputs)
    d = _out_dir(args, "run")
    files = _save_outputs(report, lg, d)
    print(graphfile.canonical_json({"counters": report.counters.to_json(), "outputs": files,
                                    "mode": "naive" if args.naive else "plan"}), end="")
    return 0


def cmd_emit_code(args) -> int:
    lg = _load(args)
    src = codegen.emit_kernel_source(_optimize(lg))
    d = _out_dir(args, "code")
    _write(os.path.join(d, "kernels.c"), src.combined())
    _write(os.path.join(d, "manifest.json"), graphfile.canonical_json(src.manifest))
    print(f"{len(src.units)} device kernels, {len(src.manifest['host_steps'])} host steps -> {d}")
    return 0


def cmd_emit_stream(args) -> int:
    lg = _load(args)
    plan = _optimize(lg)
    try:
        sp = codegen.emit_stream_plan(plan, v=args.v, slack=args.slack)
    except ValueError as exc:
        raise _Fail(2, str(exc)) from exc
    problems = codegen.validate_stream_plan(sp, plan)
    text = codegen.stream_plan_json(sp) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        print(text, end="")
    for p in problems:
        print(f"StreamPlan: {p}", file=sys.stderr)
    return 1 if problems else 0


def cmd_corpus(args) -> int:
    for name in graphfile.corpus_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphvx", description="Verify, optimize, run and emit code for vision graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    def graph_cmd(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("graph", help="graph JSON file, or the name of a shipped corpus graph")
        sp.add_argument("--size", type=_size, help="default WIDTHxHEIGHT for images without explicit dims")
        sp.set_defaults(fn=fn)
        return sp

    graph_cmd("verify", cmd_verify, "check a graph and print diagnostics")
    sp = graph_cmd("optimize", cmd_optimize, "run the pass pipeline; write stats and DOT per stage")
    sp.add_argument("--no-dce", action="store_true")
    sp.add_argument("--no-fuse", action="store_true")
    sp.add_argument("--out-dir")
    graph_cmd("stats", cmd_stats, "print pass statistics")
    sp = graph_cmd("run", cmd_run, "execute a graph on image files or random data")
    sp.add_argument("--input", action="append", metavar="NAME=FILE")
    sp.add_argument("--out-dir")
    sp.add_argument("--naive", action="store_true", help="interpret the unoptimized implementation graph")
    sp.add_argument("--seed", type=int, default=0, help="seed for inputs not given on the command line")
    sp = graph_cmd("emit-code", cmd_emit_code, "write C kernel source and a manifest")
    sp.add_argument("--out-dir")
    sp = graph_cmd("emit-stream", cmd_emit_stream, "print a streaming pipeline plan")
    sp.add_argument("--v", type=int, default=1, help="replication factor")
    sp.add_argument("--slack", type=int, default=2, help="extra FIFO depth between stages")
    sp.add_argument("--out")
    sp = sub.add_parser("corpus", help="list shipped example graphs")
    sp.set_defaults(fn=cmd_corpus)
    return p


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _Fail as exc:
        print(f"graphvx: {exc}", file=sys.stderr)
        return exc.code
    except ver.VerificationError as exc:
        for d in exc.diagnostics:
            print(d.render(), file=sys.stderr)
        return 1
    except DivByZero as exc:
        print(f"DivByZero: {exc}", file=sys.stderr)
        return 1
    except (execute.ExecutionError, OSError) as exc:
        print(f"graphvx: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
