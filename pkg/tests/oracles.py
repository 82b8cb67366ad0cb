"""Independent reference computations used as test oracles."""
import math

import numpy as np


def reference_forward(model, x):
    """Straight-line loops over neurons, no matrix products."""
    x = np.atleast_2d(x)
    out = np.empty((len(x), model.sizes[-1]))
    for s, row in enumerate(x):
        a = list(row)
        for l in range(model.n_layers):
            W, b = model.W[l], model.b[l]
            z = [b[j] + sum(a[i] * W[i, j] for i in range(len(a))) for j in range(W.shape[1])]
            a = [max(v, 0.0) for v in z] if l < model.n_layers - 1 else z
        out[s] = a
    return out


def central_fd_grad(f, p, h=1e-5):
    g = np.empty_like(p)
    for i in range(len(p)):
        old = p[i]
        p[i] = old + h
        fp = f(p)
        p[i] = old - h
        fm = f(p)
        p[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def scalar_distance(kind, a, b, p=3.0):
    """Plain-python metric definitions; None where undefined."""
    a, b = [float(v) for v in a], [float(v) for v in b]
    n = len(a)
    if kind == "euclidean":
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
    if kind == "manhattan":
        return sum(abs(x - y) for x, y in zip(a, b))
    if kind == "chebyshev":
        return max(abs(x - y) for x, y in zip(a, b))
    if kind == "minkowski":
        return sum(abs(x - y) ** p for x, y in zip(a, b)) ** (1 / p)
    if kind in ("cosine", "correlation"):
        if kind == "correlation":
            ma, mb = sum(a) / n, sum(b) / n
            a = [x - ma for x in a]
            b = [y - mb for y in b]
        na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(y * y for y in b))
        if na == 0 or nb == 0:
            return None
        return 1 - sum(x * y for x, y in zip(a, b)) / (na * nb)
    if kind == "canberra":
        return sum(abs(x - y) / (abs(x) + abs(y)) for x, y in zip(a, b) if abs(x) + abs(y) > 0)
    if kind == "braycurtis":
        den = sum(abs(x + y) for x, y in zip(a, b))
        return None if den == 0 else sum(abs(x - y) for x, y in zip(a, b)) / den
    raise ValueError(kind)


def image_source_taps(stations, pos, width, height, rho, bandwidth, n_taps, c=3e8):
    """Per station: sorted list of (tap, |amplitude|) for direct + 4 wall images, written out by hand."""
    out = []
    for sx, sy in stations:
        srcs = [((sx, sy), 1.0), ((-sx, sy), rho), ((2 * width - sx, sy), rho),
                ((sx, -sy), rho), ((sx, 2 * height - sy), rho)]
        taps = {}
        for (x, y), g in srcs:
            d = math.hypot(x - pos[0], y - pos[1])
            n = math.floor(d / c * bandwidth + 0.5)
            if n < n_taps:
                taps.setdefault(n, []).append((g / d, d / c * bandwidth - n))
        out.append(taps)
    return out
