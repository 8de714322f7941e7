"""Brute-force per-pixel references for the vision-function registry.

Pure Python loops over nested lists; nothing here touches the package's
expression evaluator, so these act as independent oracles.
"""
from __future__ import annotations

import math
from decimal import ROUND_HALF_UP, Context, Decimal

import numpy as np

RANGES = {"U8": (0, 255), "U16": (0, 65535), "S16": (-32768, 32767), "S32": (-(2**31), 2**31 - 1)}
TWO_PI = 2 * math.pi
_WIDE = Context(prec=400)


def rnd(x: float) -> int:
    """Round half away from zero, exactly."""
    return int(Decimal(x).quantize(Decimal(1), rounding=ROUND_HALF_UP, context=_WIDE))


def to_fmt(v, fmt: str, policy: str = "saturate"):
    if fmt == "F32":
        return float(np.float32(v))
    lo, hi = RANGES[fmt]
    if isinstance(v, float):
        if math.isnan(v):
            return 0
        if math.isinf(v):
            return hi if v > 0 else lo
        v = rnd(v)
    if policy == "wrap":
        return (v - lo) % (hi - lo + 1) + lo
    return min(max(v, lo), hi)


def tdiv(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b > 0) else -q


def grid(img) -> list:
    return np.asarray(img).tolist()


def pointwise(fn, *imgs):
    rows = [grid(i) for i in imgs]
    h, w = len(rows[0]), len(rows[0][0])
    return [[fn(*(r[y][x] for r in rows)) for x in range(w)] for y in range(h)]


def clamp_at(img: list, x: int, y: int):
    h, w = len(img), len(img[0])
    return img[min(max(y, 0), h - 1)][min(max(x, 0), w - 1)]


def window_map(fn, img, rx=1, ry=1):
    """fn(list of window values in row-major order) per pixel, clamped border."""
    g = grid(img)
    h, w = len(g), len(g[0])
    return [[fn([clamp_at(g, x + dx, y + dy) for dy in range(-ry, ry + 1) for dx in range(-rx, rx + 1)])
             for x in range(w)] for y in range(h)]


# -- point -------------------------------------------------------------------


def arith(op, fmt, policy="saturate", scale=1.0):
    def f(a, b):
        if op == "add":
            v = a + b
        elif op == "sub":
            v = a - b
        elif op == "absdiff":
            v = abs(a - b)
        else:
            prod = a * b
            v = prod if (scale == 1.0 and fmt != "F32") else float(prod) * scale
        if fmt == "F32":
            v = float(v)
        return to_fmt(v, fmt, policy)

    return f


def bitwise(op):
    return {"and": lambda a, b: a & b, "or": lambda a, b: a | b, "xor": lambda a, b: a ^ b}[op]


def not_u8(a):
    return 255 - a


def convert_depth(src: str, dst: str, shift: int, policy: str):
    def f(a):
        if src == "F32" or dst == "F32" or shift == 0:
            return to_fmt(float(a) if src == "F32" else a, dst, policy)
        widen = {"U8": 8, "U16": 16, "S16": 16, "S32": 32}
        v = a << shift if widen[dst] > widen[src] else a >> shift
        return to_fmt(v, dst, policy)

    return f


def magnitude(fmt):
    return lambda x, y: to_fmt(math.sqrt(x * x + y * y), fmt)


def phase(x, y):
    ang = math.atan2(float(y), float(x))
    if ang < 0.0:
        ang = ang + TWO_PI
    return to_fmt(ang * (256.0 / TWO_PI), "U8", "wrap")


def threshold_binary(t, true_value=255, false_value=0):
    return lambda a: true_value if a > t else false_value


def threshold_range(lo, hi, true_value=255, false_value=0):
    return lambda a: false_value if (a < lo or a > hi) else true_value


# -- local -------------------------------------------------------------------

GAUSS = [1, 2, 1, 2, 4, 2, 1, 2, 1]
SOBEL_X = [-1, 0, 1, -2, 0, 2, -1, 0, 1]
SOBEL_Y = [-1, -2, -1, 0, 0, 0, 1, 2, 1]


def box(fmt):
    if fmt == "F32":
        def f(ws):
            acc = 0.0
            for v in ws:
                acc = acc + v
            return to_fmt(acc / 9.0, fmt)
        return f
    return lambda ws: to_fmt(tdiv(sum(ws), 9), fmt)


def gaussian(fmt):
    return lambda ws: to_fmt(tdiv(sum(m * v for m, v in zip(GAUSS, ws)), 16), fmt)


def sobel(mask):
    return lambda ws: to_fmt(sum(m * v for m, v in zip(mask, ws)), "S16")


def median(ws):
    return sorted(ws)[4]


def convolve(img, coeffs, scale, fmt):
    c = [list(map(int, r)) for r in coeffs]
    rows, cols = len(c), len(c[0])
    ry, rx = rows // 2, cols // 2
    g = grid(img)
    h, w = len(g), len(g[0])
    out = []
    for y in range(h):
        line = []
        for x in range(w):
            acc = 0
            for dy in range(-ry, ry + 1):
                for dx in range(-rx, rx + 1):
                    # true convolution: coefficient (ry - dy, rx - dx) meets pixel (x + dx, y + dy)
                    acc += c[ry - dy][rx - dx] * clamp_at(g, x + dx, y + dy)
            line.append(to_fmt(tdiv(acc, scale) if scale != 1 else acc, fmt))
        out.append(line)
    return out


# -- global ------------------------------------------------------------------


def histogram(img, bins, offset, rng):
    counts = [0] * bins
    for row in grid(img):
        for v in row:
            if offset <= v < offset + rng:
                b = (v - offset) * bins // rng
                if 0 <= b < bins:
                    counts[b] += 1
    return counts


def minmaxloc(img, capacity):
    g = grid(img)
    flat = [(v, x, y) for y, row in enumerate(g) for x, v in enumerate(row)]
    lo = min(v for v, _, _ in flat)
    hi = max(v for v, _, _ in flat)

    def locs(target):
        pts = [[x, y] for v, x, y in flat if v == target][:capacity]
        return pts + [[-1, -1]] * (capacity - len(pts))

    return lo, hi, locs(lo), locs(hi)


def mean_stddev(img):
    g = grid(img)
    n = len(g) * len(g[0])
    total = 0
    for row in g:
        for v in row:
            total += v
    mean = float(np.float32(total / float(n)))
    acc = 0.0
    for row in g:
        for v in row:
            d = float(v) - mean
            acc = acc + d * d
    return mean, float(np.float32(math.sqrt(acc / float(n))))


def integral(img):
    g = grid(img)
    h, w = len(g), len(g[0])
    out = [[0] * w for _ in range(h)]
    for y in range(h):
        run = 0
        for x in range(w):
            run += g[y][x]
            out[y][x] = run + (out[y - 1][x] if y else 0)
    return out


def scale_nearest(img, out_w, out_h):
    g = grid(img)
    h, w = len(g), len(g[0])
    # pixel-centre mapping: source index floor((i + 0.5) * n_in / n_out)
    return [[g[min((2 * y + 1) * h // (2 * out_h), h - 1)][min((2 * x + 1) * w // (2 * out_w), w - 1)]
             for x in range(out_w)] for y in range(out_h)]


def scale_bilinear(img, out_w, out_h):
    g = grid(img)
    h, w = len(g), len(g[0])

    def taps(i, n_out, n_in):
        f = (i + 0.5) * (n_in / n_out) - 0.5
        i0 = math.floor(f)
        return min(max(i0, 0), n_in - 1), min(max(i0 + 1, 0), n_in - 1), f - i0

    out = []
    for y in range(out_h):
        y0, y1, fy = taps(y, out_h, h)
        line = []
        for x in range(out_w):
            x0, x1, fx = taps(x, out_w, w)
            top = g[y0][x0] * (1.0 - fx) + g[y0][x1] * fx
            bot = g[y1][x0] * (1.0 - fx) + g[y1][x1] * fx
            line.append(to_fmt(top * (1.0 - fy) + bot * fy, "U8"))
        out.append(line)
    return out


def equalize(img):
    counts = histogram(img, 256, 0, 256)
    cdf, run = [], 0
    for c in counts:
        run += c
        cdf.append(run)
    total = cdf[-1]
    cdf_min = next(c for c in cdf if c > 0)
    if total == cdf_min:
        lut = list(range(256))
    else:
        lut = [min(max(rnd((c - cdf_min) * (255.0 / (total - cdf_min))) if c >= cdf_min else 0, 0), 255)
               for c in cdf]
    return [[lut[v] for v in row] for row in grid(img)]
