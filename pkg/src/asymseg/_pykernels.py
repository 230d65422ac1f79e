"""Pure numpy versions of the hot kernels in ``_ckernels``.

Geometry and distance kernels reproduce the compiled arithmetic operation for
operation, so both backends return identical masks, distances and chords.
Convolutions agree to floating-point rounding only (different summation order).
"""

import numpy as np

BACKEND = "python"


def _im2col(xp, h, w):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, 9, h, w), dtype=xp.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, ky * 3 + kx] = xp[:, :, ky:ky + h, kx:kx + w]
    return cols.reshape(n, c * 9, h * w)


def conv3x3_forward(xp, w, b):
    n, ci, hp, wp = xp.shape
    h, wd = hp - 2, wp - 2
    cols = _im2col(xp, h, wd)
    y = np.matmul(w.reshape(w.shape[0], ci * 9), cols)
    y += b.reshape(1, -1, 1)
    return y.reshape(n, w.shape[0], h, wd)


def conv3x3_grad_weight(xp, dy):
    n, co, h, wd = dy.shape
    cols = _im2col(xp, h, wd)
    dw = np.matmul(dy.reshape(n, co, h * wd), cols.transpose(0, 2, 1)).sum(axis=0)
    return dw.reshape(co, xp.shape[1], 3, 3)


def conv3x3_grad_input(dy, w):
    n, co, h, wd = dy.shape
    dyp = np.zeros((n, co, h + 2, wd + 2), dtype=dy.dtype)
    dyp[:, :, 1:-1, 1:-1] = dy
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv3x3_forward(dyp, wt, np.zeros(w.shape[1], dtype=dy.dtype))


def edt_squared(mask):
    # Same two-pass separable decomposition as the compiled kernel, evaluated as a
    # dense min-plus product per pass (quadratic per line, still exact).
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    f = np.where(m, 0.0, np.inf)
    if h == 0 or w == 0 or not m.any():
        return f
    r = np.arange(h, dtype=np.float64)
    dr = (r[:, None] - r[None, :]) ** 2
    g = np.min(f[None, :, :] + dr[:, :, None], axis=1)
    c = np.arange(w, dtype=np.float64)
    dc = (c[:, None] - c[None, :]) ** 2
    return np.min(g[:, None, :] + dc[None, :, :], axis=2)


def fill_polygon(xs, ys, height, width):
    px = np.ascontiguousarray(xs, dtype=np.float64)
    py = np.ascontiguousarray(ys, dtype=np.float64)
    out = np.zeros((height, width), dtype=np.uint8)
    nv = px.shape[0]
    if nv < 3:
        return out
    qx = np.roll(px, -1)
    qy = np.roll(py, -1)
    flat = (py == qy)
    for r in range(height):
        yc = r + 0.5
        hit = ((py <= yc) & (yc < qy)) | ((qy <= yc) & (yc < py))
        if hit.any():
            x0, y0, x1, y1 = px[hit], py[hit], qx[hit], qy[hit]
            xing = np.sort(x0 + (yc - y0) * (x1 - x0) / (y1 - y0))
            for lo, hi in zip(xing[0::2], xing[1::2]):
                c0 = max(int(np.ceil(lo - 0.5)), 0)
                c1 = min(int(np.floor(hi - 0.5)), width - 1)
                if c1 >= c0:
                    out[r, c0:c1 + 1] = 1
        on = flat & (py == yc)
        for lo, hi in zip(np.minimum(px[on], qx[on]), np.maximum(px[on], qx[on])):
            c0 = max(int(np.ceil(lo - 0.5)), 0)
            c1 = min(int(np.floor(hi - 0.5)), width - 1)
            if c1 >= c0:
                out[r, c0:c1 + 1] = 1
    vx = px - 0.5
    vy = py - 0.5
    exact = (vx == np.floor(vx)) & (vy == np.floor(vy))
    for cx, cy in zip(vx[exact], vy[exact]):
        c, r = int(cx), int(cy)
        if 0 <= r < height and 0 <= c < width:
            out[r, c] = 1
    return out


def _first_inside(mask, p, ii, jj, order, chunk=512):
    h, w = mask.shape
    for start in range(0, order.size, chunk):
        sel = order[start:start + chunk]
        a, b = ii[sel], jj[sel]
        ax, ay = p[a, 0], p[a, 1]
        dx = p[b, 0] - ax
        dy = p[b, 1] - ay
        n = np.maximum(np.ceil(np.sqrt(dx * dx + dy * dy) / 0.25).astype(np.int64) + 1, 2)
        ok = np.ones(sel.size, dtype=bool)
        nmax = int(n.max())
        for s in range(nmax):
            live = s < n
            t = s / (n - 1).astype(np.float64)
            c = np.floor(ax + dx * t).astype(np.int64)
            r = np.floor(ay + dy * t).astype(np.int64)
            inb = (r >= 0) & (r < h) & (c >= 0) & (c < w)
            val = np.zeros(sel.size, dtype=bool)
            val[inb] = mask[r[inb], c[inb]] != 0
            ok &= ~live | val
        hits = np.flatnonzero(ok)
        if hits.size:
            k = hits[0]
            return int(a[k]), int(b[k])
    return -1, -1


def longest_inside_chord(mask, pts):
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    p = np.ascontiguousarray(pts, dtype=np.float64)
    ii, jj = np.triu_indices(p.shape[0], 1)
    if ii.size == 0:
        return -1, -1
    lengths = np.hypot(p[jj, 0] - p[ii, 0], p[jj, 1] - p[ii, 1])
    order = np.argsort(-lengths, kind="stable")
    return _first_inside(m, p, ii, jj, order)


def widest_cross_chord(mask, pts, origin, u, length, tol):
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    p = np.ascontiguousarray(pts, dtype=np.float64)
    rel = p - np.asarray(origin, dtype=np.float64)
    ux, uy = float(u[0]), float(u[1])
    t = rel[:, 0] * ux + rel[:, 1] * uy
    s = rel[:, 0] * (-uy) + rel[:, 1] * ux
    pos = np.flatnonzero(s > 0)
    neg = np.flatnonzero(s < 0)
    if pos.size == 0 or neg.size == 0:
        return -1, -1
    ii, jj = np.meshgrid(pos, neg, indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    mid = 0.5 * (t[ii] + t[jj])
    keep = (np.abs(t[ii] - t[jj]) <= tol) & (mid >= 0.0) & (mid <= length)
    ii = ii[keep]
    jj = jj[keep]
    if ii.size == 0:
        return -1, -1
    order = np.argsort(-(s[ii] - s[jj]), kind="stable")
    return _first_inside(m, p, ii, jj, order)
