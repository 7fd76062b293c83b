"""Pure numpy versions of the geometry and grid kernels.

These mirror ``_kernels.pyx`` function for function and are used when the
compiled extension is missing or ``USONIC_SLAM_PURE=1`` is set.
"""
import numpy as np

PARALLEL_EPS = 1e-12


def cast_rays(segs, ox, oy, angles):
    """Distance from (ox, oy) along each angle to the nearest segment.

    Returns ``inf`` for rays that hit nothing.
    """
    segs = np.asarray(segs, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    out = np.full(angles.shape[0], np.inf)
    if segs.shape[0] == 0 or angles.shape[0] == 0:
        return out
    px = segs[:, 0] - ox
    py = segs[:, 1] - oy
    ex = segs[:, 2] - segs[:, 0]
    ey = segs[:, 3] - segs[:, 1]
    dx = np.cos(angles)[:, None]
    dy = np.sin(angles)[:, None]
    denom = dx * ey - dy * ex
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (px * ey - py * ex) / denom
        u = (px * dy - py * dx) / denom
    ok = (np.abs(denom) > PARALLEL_EPS) & (t > 0.0) & (u >= 0.0) & (u <= 1.0)
    t = np.where(ok, t, np.inf)

    # collinear overlap: the ray runs along the segment
    par = np.abs(denom) <= PARALLEL_EPS
    if par.any():
        on_line = par & (np.abs(px * dy - py * dx) <= 1e-12)
        if on_line.any():
            tp = px * dx + py * dy
            tq = (px + ex) * dx + (py + ey) * dy
            lo = np.minimum(tp, tq)
            hi = np.maximum(tp, tq)
            tc = np.where(lo >= 0.0, lo, np.where(hi >= 0.0, 0.0, np.inf))
            t = np.where(on_line, np.minimum(t, tc), t)
    return t.min(axis=1)


def _clip(a, b, lo, hi):
    # keep s in [lo, hi] with a + b*s >= 0
    if b == 0.0:
        return (lo, hi) if a >= 0.0 else (1.0, 0.0)
    s = -a / b
    if b > 0.0:
        return (max(lo, s), hi)
    return (lo, min(hi, s))


def wedge_min(segs, ox, oy, center, half):
    """Closest distance from (ox, oy) to any segment point inside the wedge.

    The wedge spans ``[center - half, center + half]`` and must be narrower
    than a half plane.
    """
    segs = np.asarray(segs, dtype=np.float64)
    u1x, u1y = np.cos(center - half), np.sin(center - half)
    u2x, u2y = np.cos(center + half), np.sin(center + half)
    best = np.inf
    for k in range(segs.shape[0]):
        px = segs[k, 0] - ox
        py = segs[k, 1] - oy
        ex = segs[k, 2] - segs[k, 0]
        ey = segs[k, 3] - segs[k, 1]
        lo, hi = _clip(u1x * py - u1y * px, u1x * ey - u1y * ex, 0.0, 1.0)
        if lo > hi:
            continue
        lo, hi = _clip(px * u2y - py * u2x, ex * u2y - ey * u2x, lo, hi)
        if lo > hi:
            continue
        ee = ex * ex + ey * ey
        s = -(px * ex + py * ey) / ee
        s = min(max(s, lo), hi)
        cx = px + s * ex
        cy = py + s * ey
        d = np.sqrt(cx * cx + cy * cy)
        if d < best:
            best = d
    return float(best)


def wedge_mins(segs, ox, oy, centers, half):
    centers = np.asarray(centers, dtype=np.float64)
    return np.array([wedge_min(segs, ox, oy, c, half) for c in centers])


def rasterize_scan(i0, j0, end_i, end_j, hit, free_mask, occ_mask):
    """Mark traversed cells of every beam in ``free_mask`` / ``occ_mask``.

    Cells strictly between the start cell and the end cell are free. The end
    cell is occupied for hits and free otherwise. Cells outside the masks
    are skipped.
    """
    h, w = free_mask.shape
    for b in range(len(end_i)):
        x1 = int(end_i[b])
        y1 = int(end_j[b])
        x, y = int(i0), int(j0)
        dx = abs(x1 - x)
        dy = -abs(y1 - y)
        sx = 1 if x < x1 else -1
        sy = 1 if y < y1 else -1
        err = dx + dy
        first = True
        while True:
            if x == x1 and y == y1:
                break
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
            if hit[b]:
                occ_mask[y1, x1] = 1
            else:
                free_mask[y1, x1] = 1
