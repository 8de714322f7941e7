import json
import os
import subprocess
import sys

import numpy as np
import pytest

from graphvx import graphfile, imageio
from graphvx.cli import main
from graphvx.formats import Format


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_corpus_lists_shipped_graphs(capsys):
    code, out, _ = _run(capsys, "corpus")
    assert code == 0
    assert out.split() == graphfile.corpus_names()
    assert {"edge_fig1", "fchain", "harris", "tomasi", "unsharp", "sobelx"} <= set(out.split())


@pytest.mark.parametrize("name", [n for n in graphfile.corpus_names() if n != "bad_cycle"])
def test_verify_clean_corpus(capsys, name):
    code, out, _ = _run(capsys, "verify", name)
    assert code == 0 and out.startswith("ok: ")


def test_verify_reports_cycle(capsys):
    code, out, _ = _run(capsys, "verify", "bad_cycle")
    assert code == 1
    assert out.split()[0] == "CycleDetected"


def test_missing_file_and_bad_json_exit_2(capsys, tmp_path):
    assert _run(capsys, "verify", str(tmp_path / "absent.json"))[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(capsys, "verify", str(bad))[0] == 2
    bad.write_text(json.dumps({"data": {}, "nodes": [{"kernel": "Not"}]}))
    assert _run(capsys, "verify", str(bad))[0] == 2


def test_optimize_writes_artifacts(capsys, tmp_path):
    code, out, _ = _run(capsys, "optimize", "edge_fig1", "--size", "32x16", "--out-dir", str(tmp_path))
    assert code == 0
    stats = json.loads(out)
    assert stats == json.loads((tmp_path / "stats.json").read_text())
    assert (stats["nodes_removed"], stats["transfers_naive"], stats["transfers_optimized"]) == (1, 12, 3)
    for f in ("plan.json", "0_application.dot", "1_implementation.dot", "2_dce.dot", "3_fused.dot"):
        assert (tmp_path / f).stat().st_size > 0
    _run(capsys, "optimize", "edge_fig1", "--no-dce", "--no-fuse", "--out-dir", str(tmp_path / "raw"))
    raw = json.loads((tmp_path / "raw" / "stats.json").read_text())
    assert raw["nodes_removed"] == 0 and raw["launches_after"] == raw["launches_before"]


def test_stats_subcommand(capsys):
    code, out, _ = _run(capsys, "stats", "harris")
    doc = json.loads(out)
    assert code == 0 and doc["stats"]["transfers_optimized"] == 2


def test_run_plan_and_naive_agree(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(capsys, "run", "unsharp", "--size", "20x12", "--seed", "4", "--out-dir", str(a))[0] == 0
    code, out, _ = _run(capsys, "run", "unsharp", "--size", "20x12", "--seed", "4", "--naive", "--out-dir", str(b))
    assert code == 0 and json.loads(out)["mode"] == "naive"
    files = sorted(os.listdir(a))
    assert files == sorted(os.listdir(b)) and files
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_run_with_image_input_and_chaining(capsys, tmp_path):
    img = (np.arange(16 * 10) % 251).astype(np.uint8).reshape(10, 16)
    src = tmp_path / "in.pgm"
    imageio.write_image(str(src), img, Format.U8)
    lg = graphfile.load("gauss", (16, 10))
    (in_name,) = [n for n, o in lg.objects.items() if o.id in lg.graph.consumers() and not o.virtual]
    first = tmp_path / "first"
    code, out, _ = _run(capsys, "run", "gauss", "--size", "16x10", "--input", f"{in_name}={src}",
                        "--out-dir", str(first))
    assert code == 0
    (produced,) = json.loads(out)["outputs"]
    arr, fmt = imageio.read_image(produced)
    assert fmt == Format.U8 and arr.shape == (10, 16)
    code, _, _ = _run(capsys, "run", "gauss", "--size", "16x10", "--input", f"{in_name}={produced}",
                      "--out-dir", str(tmp_path / "second"))
    assert code == 0


def test_run_rejects_mismatched_input(capsys, tmp_path):
    p = tmp_path / "small.pgm"
    imageio.write_image(str(p), np.zeros((3, 3), np.uint8), Format.U8)
    lg = graphfile.load("gauss")
    (in_name,) = [n for n, o in lg.objects.items() if o.id in lg.graph.consumers() and not o.virtual]
    code, _, err = _run(capsys, "run", "gauss", "--input", f"{in_name}={p}", "--out-dir", str(tmp_path))
    assert code == 2 and "does not match" in err
    assert _run(capsys, "run", "gauss", "--input", "nobody=x.pgm", "--out-dir", str(tmp_path))[0] == 2


def test_emit_code_and_stream(capsys, tmp_path):
    code, out, _ = _run(capsys, "emit-code", "sobel", "--out-dir", str(tmp_path))
    assert code == 0
    assert "void gvx_" in (tmp_path / "kernels.c").read_text()
    assert json.loads((tmp_path / "manifest.json").read_text())["kernels"]
    code, out, _ = _run(capsys, "emit-stream", "unsharp", "--v", "4")
    assert code == 0 and json.loads(out)["v"] == 4
    assert _run(capsys, "emit-stream", "unsharp", "--v", "0")[0] == 2


@pytest.mark.parametrize("name", graphfile.corpus_names())
def test_graph_json_round_trip(name):
    lg = graphfile.load(name)
    text = graphfile.canonical_json(graphfile.to_doc(lg))
    again = graphfile.load_doc(json.loads(text))
    assert graphfile.canonical_json(graphfile.to_doc(again)) == text


@pytest.mark.parametrize("fmt,shape,dtype", [
    (Format.U8, (5, 7), np.uint8), (Format.RGB, (4, 6, 3), np.uint8), (Format.UYVY, (3, 8, 2), np.uint8),
    (Format.S16, (5, 3), np.int16), (Format.U16, (2, 9), np.uint16), (Format.F32, (4, 4), np.float32),
])
def test_image_io_round_trip(tmp_path, fmt, shape, dtype):
    rng = np.random.default_rng(1)
    arr = (rng.standard_normal(shape) * 1000).astype(dtype)
    path = tmp_path / ("img" + imageio.extension(fmt))
    imageio.write_image(str(path), arr, fmt)
    back, f2 = imageio.read_image(str(path))
    assert f2 == fmt and back.dtype == arr.dtype and np.array_equal(back, arr)
    assert imageio.encode(back, fmt) == path.read_bytes()


@pytest.mark.parametrize("name,local,point", [("unsharp", 1, 3), ("harris", 4, 9), ("tomasi", 4, 10)])
def test_corpus_shapes(name, local, point):
    from graphvx.verify import lower, verify

    impl = lower(verify(graphfile.load(name).graph)).graph
    kinds = {}
    for nid, n in impl.nodes.items():
        kinds.setdefault(impl.provenance[nid], set()).add(n.kernel.kind)
    classes = ["local" if "local" in ks else "point" for ks in kinds.values()]
    assert (classes.count("local"), classes.count("point")) == (local, point)


def test_console_script_and_log_levels(tmp_path):
    env = dict(os.environ, GRAPHVX_LOG="info")
    cmd = [sys.executable, "-m", "graphvx", "verify", "edge_fig1"]
    res = subprocess.run(cmd, capture_output=True, text=True, env=env)
    assert res.returncode == 0 and "graphvx INFO:" in res.stderr
    env["GRAPHVX_LOG"] = "quiet"
    res = subprocess.run(cmd, capture_output=True, text=True, env=env)
    assert res.returncode == 0 and res.stderr == ""
