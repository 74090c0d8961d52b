# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: bilinear sampling, curve scoring, density deposition, grid Dijkstra.

Mirrors ``_kernels_py`` one for one.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, sqrt, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline double _sample(const double[:, ::1] v, Py_ssize_t m, Py_ssize_t n, double x, double y) noexcept nogil:
    cdef Py_ssize_t x0, y0, x1, y1
    cdef double fx, fy, top, bottom
    if x < 0 or x > n - 1 or y < 0 or y > m - 1:
        return 0.0
    x0 = <Py_ssize_t>floor(x)
    y0 = <Py_ssize_t>floor(y)
    if x0 > n - 2:
        x0 = n - 2 if n >= 2 else 0
    if y0 > m - 2:
        y0 = m - 2 if m >= 2 else 0
    x1 = x0 + 1 if x0 + 1 < n else n - 1
    y1 = y0 + 1 if y0 + 1 < m else m - 1
    fx = x - x0
    fy = y - y0
    top = v[y0, x0] * (1 - fx) + v[y0, x1] * fx
    bottom = v[y1, x0] * (1 - fx) + v[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def bilinear(values, xs, ys):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    xa, ya = np.broadcast_arrays(np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64))
    shape = xa.shape
    cdef const double[::1] xf = np.ascontiguousarray(xa).ravel()
    cdef const double[::1] yf = np.ascontiguousarray(ya).ravel()
    out = np.empty(xf.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i, m = v.shape[0], n = v.shape[1]
    with nogil:
        for i in range(xf.shape[0]):
            o[i] = _sample(v, m, n, xf[i], yf[i])
    return out.reshape(shape)


def score_curves(values, curves, weights):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(np.atleast_2d(curves), dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t L = c.shape[0], n = c.shape[1], m = v.shape[0], nv = v.shape[1]
    cdef Py_ssize_t l, j
    cdef double num, den, slope, ds
    out = np.empty(L)
    cdef double[::1] o = out
    with nogil:
        for l in range(L):
            num = 0.0
            den = 0.0
            for j in range(n):
                if n == 1:
                    slope = 0.0
                elif j == 0:
                    slope = c[l, 1] - c[l, 0]
                elif j == n - 1:
                    slope = c[l, n - 1] - c[l, n - 2]
                else:
                    slope = 0.5 * (c[l, j + 1] - c[l, j - 1])
                ds = sqrt(1.0 + slope * slope)
                num += w[j] * ds * _sample(v, m, nv, <double>j, c[l, j])
                den += w[j] * ds
            o[l] = num / den
    return out


def deposit(grid, xs, ys, weights, double lengthscale, double radius):
    cdef double[:, ::1] g = grid
    cdef const double[::1] xa = np.ascontiguousarray(np.ravel(xs), dtype=np.float64)
    cdef const double[::1] ya = np.ascontiguousarray(np.ravel(ys), dtype=np.float64)
    cdef const double[::1] wa = np.ascontiguousarray(np.ravel(weights), dtype=np.float64)
    cdef Py_ssize_t m = g.shape[0], n = g.shape[1], k, px, py, x_lo, x_hi, y_lo, y_hi
    cdef double norm = 1.0 / (2.0 * 3.141592653589793 * lengthscale * lengthscale)
    cdef double inv = 0.5 / (lengthscale * lengthscale)
    cdef double r2max = radius * radius, x, y, ddx, ddy, d2, wk
    with nogil:
        for k in range(xa.shape[0]):
            x = xa[k]
            y = ya[k]
            wk = wa[k] * norm
            x_lo = <Py_ssize_t>floor(x - radius)
            x_hi = <Py_ssize_t>floor(x + radius) + 1
            y_lo = <Py_ssize_t>floor(y - radius)
            y_hi = <Py_ssize_t>floor(y + radius) + 1
            if x_lo < 0:
                x_lo = 0
            if y_lo < 0:
                y_lo = 0
            if x_hi > n - 1:
                x_hi = n - 1
            if y_hi > m - 1:
                y_hi = m - 1
            for py in range(y_lo, y_hi + 1):
                ddy = py - y
                for px in range(x_lo, x_hi + 1):
                    ddx = px - x
                    d2 = ddx * ddx + ddy * ddy
                    if d2 <= r2max:
                        g[py, px] += wk * exp(-inv * d2)
    return grid


# binary min-heap keyed on (dist, node) -- same ordering as heapq on tuples
cdef struct Entry:
    double d
    Py_ssize_t v


cdef inline bint _less(Entry a, Entry b) noexcept nogil:
    return a.d < b.d or (a.d == b.d and a.v < b.v)


cdef void _push(Entry* heap, Py_ssize_t* size, Entry e) noexcept nogil:
    cdef Py_ssize_t i = size[0], parent
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(e, heap[parent]):
            heap[i] = heap[parent]
            i = parent
        else:
            break
    heap[i] = e


cdef Entry _pop(Entry* heap, Py_ssize_t* size) noexcept nogil:
    cdef Entry top = heap[0], last
    cdef Py_ssize_t i = 0, child
    size[0] -= 1
    last = heap[size[0]]
    while True:
        child = 2 * i + 1
        if child >= size[0]:
            break
        if child + 1 < size[0] and _less(heap[child + 1], heap[child]):
            child += 1
        if _less(heap[child], last):
            heap[i] = heap[child]
            i = child
        else:
            break
    if size[0] > 0:
        heap[i] = last
    return top


def dijkstra(cost, start, end):
    cdef const double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t m = c.shape[0], n = c.shape[1], total = m * n
    cdef Py_ssize_t src = start[0] * n + start[1], dst = end[0] * n + end[1]
    dist_arr = np.full(total, np.inf)
    prev_arr = np.full(total, -1, dtype=np.intp)
    done_arr = np.zeros(total, dtype=np.uint8)
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t[::1] prev = prev_arr
    cdef unsigned char[::1] done = done_arr
    cdef int[8] drs = [-1, -1, -1, 0, 0, 1, 1, 1]
    cdef int[8] dcs = [-1, 0, 1, -1, 1, -1, 0, 1]
    # each node is pushed at most 8 times (once per improving neighbour) plus the source
    cdef Py_ssize_t cap = 8 * total + 1, size = 0, u, v, r, cc, rr, col, k
    cdef Entry* heap = <Entry*>malloc(cap * sizeof(Entry))
    cdef Entry e, f
    cdef double nd, du
    if heap == NULL:
        raise MemoryError()
    try:
        with nogil:
            dist[src] = 0.0
            e.d = 0.0
            e.v = src
            _push(heap, &size, e)
            while size > 0:
                e = _pop(heap, &size)
                u = e.v
                if done[u]:
                    continue
                du = e.d
                done[u] = 1
                if u == dst:
                    break
                r = u // n
                col = u - r * n
                for k in range(8):
                    rr = r + drs[k]
                    cc = col + dcs[k]
                    if rr < 0 or rr >= m or cc < 0 or cc >= n:
                        continue
                    v = rr * n + cc
                    if done[v]:
                        continue
                    nd = du + c[rr, cc]
                    if nd < dist[v]:
                        dist[v] = nd
                        prev[v] = u
                        f.d = nd
                        f.v = v
                        _push(heap, &size, f)
    finally:
        free(heap)
    path = []
    v = dst
    while v != -1:
        path.append(divmod(v, n))
        if v == src:
            break
        v = prev[v]
    path.reverse()
    return np.asarray(path, dtype=np.intp).reshape(-1, 2), float(dist_arr[dst])
