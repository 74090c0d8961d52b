"""Pure numpy / Python implementations of the hot kernels.

Semantics match ``_kernels.pyx`` exactly (including Dijkstra tie-breaking);
this module is used whenever the compiled extension is unavailable.
"""

import heapq
import math

import numpy as np

_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def bilinear(values, xs, ys):
    values = np.asarray(values, dtype=float)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    m, n = values.shape
    out = np.zeros(np.broadcast(xs, ys).shape)
    xs, ys = np.broadcast_arrays(xs, ys)
    inside = (xs >= 0) & (xs <= n - 1) & (ys >= 0) & (ys <= m - 1)
    x = xs[inside]
    y = ys[inside]
    x0 = np.minimum(np.floor(x).astype(np.intp), max(n - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(m - 2, 0))
    x1 = np.minimum(x0 + 1, n - 1)
    y1 = np.minimum(y0 + 1, m - 1)
    fx = x - x0
    fy = y - y0
    top = values[y0, x0] * (1 - fx) + values[y0, x1] * fx
    bottom = values[y1, x0] * (1 - fx) + values[y1, x1] * fx
    out[inside] = top * (1 - fy) + bottom * fy
    return out


def score_curves(values, curves, weights):
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    n = curves.shape[1]
    cols = np.arange(n, dtype=float)
    g = bilinear(values, np.broadcast_to(cols, curves.shape), curves)
    slope = np.gradient(curves, axis=1) if n > 1 else np.zeros_like(curves)
    ds = np.sqrt(1.0 + slope * slope)
    num = (g * ds) @ weights
    den = ds @ weights
    return num / den


def deposit(grid, xs, ys, weights, lengthscale, radius):
    """Add weighted isotropic Gaussian bumps centred at ``(xs, ys)`` to ``grid`` in place."""
    m, n = grid.shape
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    reach = int(math.floor(radius)) + 1
    norm = 1.0 / (2.0 * math.pi * lengthscale * lengthscale)
    inv = 0.5 / (lengthscale * lengthscale)
    r2max = radius * radius
    bx = np.floor(xs).astype(np.intp)
    by = np.floor(ys).astype(np.intp)
    flat = np.zeros(m * n)
    for dy in range(-reach, reach + 2):
        py = by + dy
        ddy = py - ys
        for dx in range(-reach, reach + 2):
            px = bx + dx
            ddx = px - xs
            d2 = ddx * ddx + ddy * ddy
            ok = (d2 <= r2max) & (px >= 0) & (px < n) & (py >= 0) & (py < m)
            if not ok.any():
                continue
            contrib = weights[ok] * norm * np.exp(-inv * d2[ok])
            flat += np.bincount(py[ok] * n + px[ok], weights=contrib, minlength=m * n)
    grid += flat.reshape(m, n)
    return grid


def dijkstra(cost, start, end):
    """Minimum-cost 8-connected path; entering a pixel costs ``cost[pixel]``.

    ``start``/``end`` are ``(row, col)``. Returns ``(path, total)`` with the
    path as an ``(k, 2)`` int array of (row, col) from start to end.
    """
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    flat_cost = cost.ravel().tolist()
    src = start[0] * n + start[1]
    dst = end[0] * n + end[1]
    dist = [math.inf] * (m * n)
    prev = [-1] * (m * n)
    done = [False] * (m * n)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == dst:
            break
        r, c = divmod(u, n)
        for dr, dc in _NEIGHBOURS:
            rr = r + dr
            cc = c + dc
            if rr < 0 or rr >= m or cc < 0 or cc >= n:
                continue
            v = rr * n + cc
            if done[v]:
                continue
            nd = d + flat_cost[v]
            if nd < dist[v]:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    path = []
    v = dst
    while v != -1:
        path.append(divmod(v, n))
        if v == src:
            break
        v = prev[v]
    path.reverse()
    return np.asarray(path, dtype=np.intp).reshape(-1, 2), dist[dst]
