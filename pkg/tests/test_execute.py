import numpy as np
import pytest

from graphvx import graphfile
from graphvx.execute import MissingInput, ShapeMismatch, random_inputs, run_naive, run_plan
from graphvx.formats import Format
from graphvx.graph import Context
from graphvx.ir import DivByZero, InputPixel, PointKernel, cast
from graphvx.optimize import optimize
from graphvx.verify import verify
from support import edge_detector, run_both


def _one(kernel, fmt_in="U8", fmt_out="U8", attrs=None, w=7, h=5):
    ctx = Context()
    g = ctx.create_graph()
    src, dst = ctx.create_image(w, h, fmt_in, "src"), ctx.create_image(w, h, fmt_out, "dst")
    g.add_node(kernel, [src, dst], attrs or {})
    return g, src, dst


def test_counters_for_single_point_node():
    g, src, dst = _one("Not")
    rep = run_naive(verify(g), {src.id: np.zeros((5, 7), np.uint8)})
    c = rep.counters
    assert (c.kernel_launches, c.pixels_read, c.pixels_written, c.transfers_executed) == (1, 35, 35, 2)
    assert (rep.outputs[dst.id] == 255).all()


def test_local_node_reads_window_times_pixels():
    g, src, dst = _one("Box3x3")
    rep = run_naive(verify(g), {src.id: np.ones((5, 7), np.uint8)})
    assert rep.counters.pixels_read == 9 * 35


def test_inputs_by_name_or_id():
    g, src, dst = _one("Not")
    img = np.arange(35, dtype=np.uint8).reshape(5, 7)
    vg = verify(g)
    a = run_naive(vg, {"src": img}).outputs
    b = run_naive(vg, {src.id: img}).outputs
    assert np.array_equal(a[dst.id], b[dst.id])
    assert run_naive(vg, {"src": img}).by_name()["dst"].tolist() == (255 - img).tolist()


def test_missing_input_raises():
    g, src, dst = _one("Not")
    with pytest.raises(MissingInput):
        run_naive(verify(g), {})
    with pytest.raises(MissingInput):
        run_naive(verify(g), {"nope": np.zeros((5, 7), np.uint8)})


def test_wrong_shape_or_float_data_rejected():
    g, src, dst = _one("Not")
    with pytest.raises(ShapeMismatch):
        run_naive(verify(g), {src.id: np.zeros((7, 5), np.uint8)})
    with pytest.raises(ShapeMismatch):
        run_naive(verify(g), {src.id: np.zeros((5, 7), np.float64)})


def test_runtime_division_by_zero():
    ctx = Context()
    g = ctx.create_graph()
    a, b, out = (ctx.create_image(4, 4, "U8") for _ in range(3))
    k = PointKernel("Ratio", 2, cast(Format.U8, InputPixel(0) / InputPixel(1)))
    g.add_node(k, [a, b, out])
    vg = verify(g)
    ones = np.ones((4, 4), np.uint8)
    assert (run_naive(vg, {a.id: ones * 9, b.id: ones * 2}).outputs[out.id] == 4).all()
    with pytest.raises(DivByZero):
        run_naive(vg, {a.id: ones, b.id: np.zeros((4, 4), np.uint8)})


@pytest.mark.parametrize("border,corner", [("clamp", 10), ("constant:0", 4), ("constant:90", 54)])
def test_boundary_modes(border, corner):
    g, src, dst = _one("Box3x3", attrs={"border": border}, w=4, h=4)
    img = np.full((4, 4), 10, np.uint8)
    naive, plan = run_both(g, {src.id: img})
    out = naive.outputs[dst.id]
    assert out[0, 0] == corner and out[1, 1] == 10
    assert np.array_equal(out, plan.outputs[dst.id])


def test_plan_counts_fewer_launches_and_transfers():
    ctx, g, inp, out = edge_detector(32, 16)
    vg = verify(g)
    inputs = random_inputs(vg, 1)
    naive = run_naive(vg, inputs)
    plan = run_plan(optimize(vg), inputs)
    assert (naive.counters.kernel_launches, plan.counters.kernel_launches) == (6, 3)
    assert (naive.counters.transfers_executed, plan.counters.transfers_executed) == (12, 3)
    assert plan.counters.pixels_read < naive.counters.pixels_read
    assert np.array_equal(naive.outputs[out.id], plan.outputs[out.id])


def test_host_steps_are_counted_separately():
    lg = graphfile.load("equalize", (16, 12))
    vg = verify(lg.graph)
    rep = run_naive(vg, random_inputs(vg, 2))
    assert rep.counters.host_steps == 1 and rep.counters.kernel_launches == 3


def test_scalar_outputs_stay_zero_dimensional():
    ctx = Context()
    g = ctx.create_graph()
    src = ctx.create_image(6, 6, "U8")
    lo, hi = ctx.create_scalar("U8", name="lo"), ctx.create_scalar("U8", name="hi")
    g.add_node("MinMaxLoc", [src, lo, hi])
    img = np.arange(36, dtype=np.uint8).reshape(6, 6)
    out = run_naive(verify(g), {src.id: img}).outputs
    assert out[lo.id].shape == () and int(out[lo.id]) == 0 and int(out[hi.id]) == 35


def test_random_inputs_cover_image_sources_only():
    ctx, g, inp, out = edge_detector(8, 8)
    ins = random_inputs(verify(g), 0)
    assert list(ins) == [inp.id] and ins[inp.id].shape == (8, 8, 2)
    again = random_inputs(verify(g), 0)
    assert np.array_equal(ins[inp.id], again[inp.id])
