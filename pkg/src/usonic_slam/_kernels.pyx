# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry and grid kernels.

Same contracts as ``_kernels_py``; the arithmetic follows the same order so
both backends agree to rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs, INFINITY

cnp.import_array()

cdef double PARALLEL_EPS = 1e-12


cdef double _cast_one(const double[:, :] segs, double ox, double oy,
                      double dx, double dy) noexcept nogil:
    cdef Py_ssize_t k
    cdef double px, py, ex, ey, denom, t, u, tp, tq, lo, hi, tc
    cdef double best = INFINITY
    for k in range(segs.shape[0]):
        px = segs[k, 0] - ox
        py = segs[k, 1] - oy
        ex = segs[k, 2] - segs[k, 0]
        ey = segs[k, 3] - segs[k, 1]
        denom = dx * ey - dy * ex
        if fabs(denom) > PARALLEL_EPS:
            t = (px * ey - py * ex) / denom
            u = (px * dy - py * dx) / denom
            if t > 0.0 and u >= 0.0 and u <= 1.0 and t < best:
                best = t
        elif fabs(px * dy - py * dx) <= 1e-12:
            tp = px * dx + py * dy
            tq = (px + ex) * dx + (py + ey) * dy
            lo = tp if tp < tq else tq
            hi = tq if tp < tq else tp
            if lo >= 0.0:
                tc = lo
            elif hi >= 0.0:
                tc = 0.0
            else:
                tc = INFINITY
            if tc < best:
                best = tc
    return best


def cast_rays(segs, double ox, double oy, angles):
    cdef const double[:, :] s = np.ascontiguousarray(segs, dtype=np.float64).reshape(-1, 4)
    cdef const double[:] a = np.ascontiguousarray(angles, dtype=np.float64)
    out = np.empty(a.shape[0], dtype=np.float64)
    cdef double[:] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(a.shape[0]):
            o[i] = _cast_one(s, ox, oy, cos(a[i]), sin(a[i]))
    return out


cdef inline bint _clip(double a, double b, double *lo, double *hi) noexcept nogil:
    cdef double s
    if b == 0.0:
        return a >= 0.0
    s = -a / b
    if b > 0.0:
        if s > lo[0]:
            lo[0] = s
    else:
        if s < hi[0]:
            hi[0] = s
    return lo[0] <= hi[0]


cdef double _wedge_one(const double[:, :] segs, double ox, double oy,
                       double center, double half) noexcept nogil:
    cdef double u1x = cos(center - half), u1y = sin(center - half)
    cdef double u2x = cos(center + half), u2y = sin(center + half)
    cdef double best = INFINITY
    cdef double px, py, ex, ey, lo, hi, ee, s, cx, cy, d
    cdef Py_ssize_t k
    for k in range(segs.shape[0]):
        px = segs[k, 0] - ox
        py = segs[k, 1] - oy
        ex = segs[k, 2] - segs[k, 0]
        ey = segs[k, 3] - segs[k, 1]
        lo = 0.0
        hi = 1.0
        if not _clip(u1x * py - u1y * px, u1x * ey - u1y * ex, &lo, &hi):
            continue
        if not _clip(px * u2y - py * u2x, ex * u2y - ey * u2x, &lo, &hi):
            continue
        ee = ex * ex + ey * ey
        s = -(px * ex + py * ey) / ee
        if s < lo:
            s = lo
        if s > hi:
            s = hi
        cx = px + s * ex
        cy = py + s * ey
        d = sqrt(cx * cx + cy * cy)
        if d < best:
            best = d
    return best


def wedge_min(segs, double ox, double oy, double center, double half):
    cdef const double[:, :] s = np.ascontiguousarray(segs, dtype=np.float64).reshape(-1, 4)
    return _wedge_one(s, ox, oy, center, half)


def wedge_mins(segs, double ox, double oy, centers, double half):
    cdef const double[:, :] s = np.ascontiguousarray(segs, dtype=np.float64).reshape(-1, 4)
    cdef const double[:] c = np.ascontiguousarray(centers, dtype=np.float64)
    out = np.empty(c.shape[0], dtype=np.float64)
    cdef double[:] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(c.shape[0]):
            o[i] = _wedge_one(s, ox, oy, c[i], half)
    return out


def rasterize_scan(long i0, long j0, end_i, end_j, hit, cnp.uint8_t[:, :] free_mask,
                   cnp.uint8_t[:, :] occ_mask):
    cdef const long long[:] ei = np.ascontiguousarray(end_i, dtype=np.int64)
    cdef const long long[:] ej = np.ascontiguousarray(end_j, dtype=np.int64)
    cdef const cnp.uint8_t[:] hb = np.ascontiguousarray(hit, dtype=np.uint8)
    cdef Py_ssize_t h = free_mask.shape[0], w = free_mask.shape[1]
    cdef Py_ssize_t b
    cdef long x, y, x1, y1, dx, dy, sx, sy, err, e2
    cdef bint first
    with nogil:
        for b in range(ei.shape[0]):
            x1 = ei[b]
            y1 = ej[b]
            x = i0
            y = j0
            dx = x1 - x if x1 > x else x - x1
            dy = -(y1 - y if y1 > y else y - y1)
            sx = 1 if x < x1 else -1
            sy = 1 if y < y1 else -1
            err = dx + dy
            first = True
            while not (x == x1 and y == y1):
                if not first and 0 <= x < w and 0 <= y < h:
                    free_mask[y, x] = 1
                first = False
                e2 = 2 * err
                if e2 >= dy:
                    err += dy
                    x += sx
                if e2 <= dx:
                    err += dx
                    y += sy
            if 0 <= x1 < w and 0 <= y1 < h and not (x1 == i0 and y1 == j0):
                if hb[b]:
                    occ_mask[y1, x1] = 1
                else:
                    free_mask[y1, x1] = 1
