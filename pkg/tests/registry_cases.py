"""One or more oracle cases per registered vision function."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

import oracles as O
from support import run_both, single_node


@dataclass
class Case:
    id: str
    kernel: str
    specs: list
    oracle: Callable  # (input arrays) -> list of expected outputs
    attrs: dict = field(default_factory=dict)
    size: tuple = (16, 16)


def _pw(fn):
    return lambda ins: [O.pointwise(fn, *ins)]


def _win(fn):
    return lambda ins: [O.window_map(fn, ins[0])]


LAP = [[0, 1, 0], [1, -4, 1], [0, 1, 0]]
ASYM = [[1, 2, 0], [0, 0, -1], [3, 0, -2]]
WIDE = [[1, 1, 1, 1, 1], [1, 2, 2, 2, 1], [1, 2, 3, 2, 1]]

CASES = [
    Case("Add-U8", "Add", [("in", "U8"), ("in", "U8"), ("out", "U8")], _pw(O.arith("add", "U8"))),
    Case("Add-U8-wrap", "Add", [("in", "U8"), ("in", "U8"), ("out", "U8")], _pw(O.arith("add", "U8", "wrap")),
         {"policy": "wrap"}),
    Case("Add-S16", "Add", [("in", "S16"), ("in", "U8"), ("out", "S16")], _pw(O.arith("add", "S16"))),
    Case("Add-F32", "Add", [("in", "F32"), ("in", "F32"), ("out", "F32")], _pw(O.arith("add", "F32"))),
    Case("Subtract-U8", "Subtract", [("in", "U8"), ("in", "U8"), ("out", "U8")], _pw(O.arith("sub", "U8"))),
    Case("Subtract-S16", "Subtract", [("in", "S16"), ("in", "S16"), ("out", "S16")], _pw(O.arith("sub", "S16"))),
    Case("AbsDiff-S16", "AbsDiff", [("in", "S16"), ("in", "S16"), ("out", "S16")], _pw(O.arith("absdiff", "S16"))),
    Case("Multiply-U8", "Multiply", [("in", "U8"), ("in", "U8"), ("out", "U8")], _pw(O.arith("mul", "U8"))),
    Case("Multiply-scale", "Multiply", [("in", "U8"), ("in", "U8"), ("out", "S16")],
         _pw(O.arith("mul", "S16", scale=1 / 255)), {"scale": 1 / 255}),
    Case("Multiply-F32", "Multiply", [("in", "S16"), ("in", "S16"), ("out", "F32")], _pw(O.arith("mul", "F32"))),
    Case("And", "And", [("in", "U8"), ("in", "U8"), ("out", "U8")], _pw(O.bitwise("and"))),
    Case("Or", "Or", [("in", "U8"), ("in", "U8"), ("out", "U8")], _pw(O.bitwise("or"))),
    Case("Xor", "Xor", [("in", "U8"), ("in", "U8"), ("out", "U8")], _pw(O.bitwise("xor"))),
    Case("Not", "Not", [("in", "U8"), ("out", "U8")], _pw(O.not_u8)),
    Case("ChannelExtract-UYVY", "ChannelExtract", [("in", "UYVY"), ("out", "U8")],
         lambda ins: [[[px[1] for px in row] for row in O.grid(ins[0])]], {"channel": "Y"}),
    Case("ChannelExtract-RGB", "ChannelExtract", [("in", "RGB"), ("out", "U8")],
         lambda ins: [[[px[2] for px in row] for row in O.grid(ins[0])]], {"channel": "B"}),
    Case("ChannelCombine", "ChannelCombine", [("in", "U8"), ("in", "U8"), ("in", "U8"), ("out", "RGB")],
         _pw(lambda r, g, b: [r, g, b])),
    Case("ConvertDepth-up", "ConvertDepth", [("in", "U8"), ("out", "S16")],
         _pw(O.convert_depth("U8", "S16", 4, "saturate")), {"shift": 4}),
    Case("ConvertDepth-down", "ConvertDepth", [("in", "S16"), ("out", "U8")],
         _pw(O.convert_depth("S16", "U8", 3, "saturate")), {"shift": 3}),
    Case("ConvertDepth-wrap", "ConvertDepth", [("in", "S16"), ("out", "U8")],
         _pw(O.convert_depth("S16", "U8", 0, "wrap")), {"policy": "wrap"}),
    Case("ConvertDepth-F32", "ConvertDepth", [("in", "F32"), ("out", "S16")],
         _pw(O.convert_depth("F32", "S16", 0, "saturate"))),
    Case("Copy-UYVY", "Copy", [("in", "UYVY"), ("out", "UYVY")], _pw(lambda p: p)),
    Case("Copy-S32", "Copy", [("in", "S32"), ("out", "S32")], _pw(lambda p: p)),
    Case("Magnitude", "Magnitude", [("in", "S16"), ("in", "S16"), ("out", "S16")], _pw(O.magnitude("S16"))),
    Case("Magnitude-F32", "Magnitude", [("in", "F32"), ("in", "F32"), ("out", "F32")], _pw(O.magnitude("F32"))),
    Case("Phase", "Phase", [("in", "S16"), ("in", "S16"), ("out", "U8")], _pw(O.phase)),
    Case("Threshold-binary", "Threshold", [("in", "U8"), ("scalar", "U8", 127), ("out", "U8")],
         _pw(O.threshold_binary(127))),
    Case("Threshold-range", "Threshold",
         [("in", "S16"), ("scalar", "S16", -100), ("out", "U8"), ("scalar", "S16", 9000)],
         _pw(O.threshold_range(-100, 9000, 7, 3)), {"type": "range", "true_value": 7, "false_value": 3}),
    Case("Box3x3-U8", "Box3x3", [("in", "U8"), ("out", "U8")], _win(O.box("U8"))),
    Case("Box3x3-S16", "Box3x3", [("in", "S16"), ("out", "S16")], _win(O.box("S16"))),
    Case("Box3x3-F32", "Box3x3", [("in", "F32"), ("out", "F32")], _win(O.box("F32"))),
    Case("Gaussian3x3-U8", "Gaussian3x3", [("in", "U8"), ("out", "U8")], _win(O.gaussian("U8"))),
    Case("Gaussian3x3-S16", "Gaussian3x3", [("in", "S16"), ("out", "S16")], _win(O.gaussian("S16"))),
    Case("Dilate3x3", "Dilate3x3", [("in", "U8"), ("out", "U8")], _win(max)),
    Case("Erode3x3", "Erode3x3", [("in", "U8"), ("out", "U8")], _win(min)),
    Case("Median3x3", "Median3x3", [("in", "U8"), ("out", "U8")], _win(O.median)),
    Case("Sobel3x3", "Sobel3x3", [("in", "U8"), ("out", "S16"), ("out", "S16")],
         lambda ins: [O.window_map(O.sobel(O.SOBEL_X), ins[0]), O.window_map(O.sobel(O.SOBEL_Y), ins[0])]),
    Case("Sobel3x3-y-only", "Sobel3x3", [("in", "U8"), None, ("out", "S16")],
         lambda ins: [O.window_map(O.sobel(O.SOBEL_Y), ins[0])]),
    Case("Convolve-lap", "Convolve", [("in", "U8"), ("matrix", "S16", LAP), ("out", "S16")],
         lambda ins: [O.convolve(ins[0], LAP, 1, "S16")]),
    Case("Convolve-asym", "Convolve", [("in", "S16"), ("matrix", "S16", ASYM), ("out", "S16")],
         lambda ins: [O.convolve(ins[0], ASYM, 3, "S16")], {"scale": 3}),
    Case("Convolve-5x3", "Convolve", [("in", "U8"), ("matrix", "S32", WIDE), ("out", "U8")],
         lambda ins: [O.convolve(ins[0], WIDE, 23, "U8")], {"scale": 23}),
    Case("Histogram", "Histogram", [("in", "U8"), ("dist", 16, 0, 256)],
         lambda ins: [O.histogram(ins[0], 16, 0, 256)]),
    Case("Histogram-offset", "Histogram", [("in", "U8"), ("dist", 10, 20, 200)],
         lambda ins: [O.histogram(ins[0], 10, 20, 200)]),
    Case("MinMaxLoc", "MinMaxLoc", [("in", "S16"), ("oscalar", "S16"), ("oscalar", "S16"), ("array", 4), ("array", 4)],
         lambda ins: list(O.minmaxloc(ins[0], 4))),
    Case("MinMaxLoc-U8", "MinMaxLoc", [("in", "U8"), ("oscalar", "U8"), ("oscalar", "U8")],
         lambda ins: list(O.minmaxloc(ins[0], 0)[:2])),
    Case("MeanStdDev", "MeanStdDev", [("in", "U8"), ("oscalar", "F32"), ("oscalar", "F32")],
         lambda ins: list(O.mean_stddev(ins[0]))),
    Case("IntegralImage", "IntegralImage", [("in", "U8"), ("out", "S32")], lambda ins: [O.integral(ins[0])]),
    Case("ScaleImage-nearest", "ScaleImage", [("in", "U8"), ("img", "U8", 7, 23)],
         lambda ins: [O.scale_nearest(ins[0], 7, 23)]),
    Case("ScaleImage-bilinear", "ScaleImage", [("in", "U8"), ("img", "U8", 11, 9)],
         lambda ins: [O.scale_bilinear(ins[0], 11, 9)], {"interp": "bilinear"}),
    Case("EqualizeHist", "EqualizeHist", [("in", "U8"), ("out", "U8")], lambda ins: [O.equalize(ins[0])]),
]


def check_case(case: Case, trials: int, seed: int = 0) -> list[str]:
    """Run ``trials`` random inputs through naive and planned execution; return mismatch messages."""
    rng = np.random.default_rng(seed)
    problems = []
    for t in range(trials):
        g, inputs, arrays, outs = single_node(case.kernel, case.specs, case.attrs, rng, *case.size)
        naive, plan = run_both(g, inputs)
        expected = case.oracle(arrays)
        for obj, want in zip(outs, expected):
            for label, rep in (("naive", naive), ("plan", plan)):
                got = rep.outputs[obj.id]
                if np.asarray(got).tolist() != np.asarray(want).tolist():
                    problems.append(f"{case.id} trial {t} {label}: output {obj.id} differs")
        if problems:
            break
    return problems
