# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. ``_pykernels`` mirrors every function here in numpy."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, sqrt, INFINITY

cnp.import_array()

cdef extern from "_convk.h":
    void conv3_fwd_f32(const float* xp, const float* w, float* out, Py_ssize_t N,
                       Py_ssize_t Ci, Py_ssize_t Co, Py_ssize_t H, Py_ssize_t W) nogil
    void conv3_fwd_f64(const double* xp, const double* w, double* out, Py_ssize_t N,
                       Py_ssize_t Ci, Py_ssize_t Co, Py_ssize_t H, Py_ssize_t W) nogil
    void conv3_dw_f32(const float* xp, const float* dy, float* dw, Py_ssize_t N,
                      Py_ssize_t Ci, Py_ssize_t Co, Py_ssize_t H, Py_ssize_t W) nogil
    void conv3_dw_f64(const double* xp, const double* dy, double* dw, Py_ssize_t N,
                      Py_ssize_t Ci, Py_ssize_t Co, Py_ssize_t H, Py_ssize_t W) nogil
    unsigned int asymseg_ftz_enter() nogil
    void asymseg_ftz_exit(unsigned int old) nogil

BACKEND = "cython"

ctypedef fused real:
    float
    double


def _conv3_accumulate(real[:, :, :, ::1] xp, real[:, :, :, ::1] w, real[:, :, :, ::1] out):
    cdef Py_ssize_t N = out.shape[0], Co = out.shape[1], H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t Ci = xp.shape[1]
    cdef unsigned int csr
    if N == 0 or Co == 0 or Ci == 0:
        return
    with nogil:
        csr = asymseg_ftz_enter()
        if real is float:
            conv3_fwd_f32(&xp[0, 0, 0, 0], &w[0, 0, 0, 0], &out[0, 0, 0, 0], N, Ci, Co, H, W)
        else:
            conv3_fwd_f64(&xp[0, 0, 0, 0], &w[0, 0, 0, 0], &out[0, 0, 0, 0], N, Ci, Co, H, W)
        asymseg_ftz_exit(csr)


def _conv3_dw(real[:, :, :, ::1] xp, real[:, :, :, ::1] dy, real[:, :, :, ::1] dw):
    cdef Py_ssize_t N = dy.shape[0], Co = dy.shape[1], H = dy.shape[2], W = dy.shape[3]
    cdef Py_ssize_t Ci = xp.shape[1]
    cdef unsigned int csr
    if N == 0:
        dw[...] = 0
        return
    with nogil:
        csr = asymseg_ftz_enter()
        if real is float:
            conv3_dw_f32(&xp[0, 0, 0, 0], &dy[0, 0, 0, 0], &dw[0, 0, 0, 0], N, Ci, Co, H, W)
        else:
            conv3_dw_f64(&xp[0, 0, 0, 0], &dy[0, 0, 0, 0], &dw[0, 0, 0, 0], N, Ci, Co, H, W)
        asymseg_ftz_exit(csr)


def conv3x3_forward(xp, w, b):
    """y = conv(xp, w) + b for a pre-padded input ``xp`` of shape (N, Ci, H+2, W+2)."""
    n, _, hp, wp = xp.shape
    out = np.empty((n, w.shape[0], hp - 2, wp - 2), dtype=xp.dtype)
    out[...] = b.reshape(1, -1, 1, 1)
    _conv3_accumulate(np.ascontiguousarray(xp), np.ascontiguousarray(w), out)
    return out


def conv3x3_grad_weight(xp, dy):
    dw = np.empty((dy.shape[1], xp.shape[1], 3, 3), dtype=dy.dtype)
    _conv3_dw(np.ascontiguousarray(xp), np.ascontiguousarray(dy), dw)
    return dw


def conv3x3_grad_input(dy, w):
    n, co, h, wd = dy.shape
    dyp = np.zeros((n, co, h + 2, wd + 2), dtype=dy.dtype)
    dyp[:, :, 1:-1, 1:-1] = dy
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    out = np.zeros((n, w.shape[1], h, wd), dtype=dy.dtype)
    _conv3_accumulate(dyp, wt, out)
    return out


cdef void _dt1d(double* f, double* d, Py_ssize_t n, Py_ssize_t* v, double* z) noexcept nogil:
    # lower envelope of parabolas rooted at finite f[q]
    cdef Py_ssize_t k = -1, q
    cdef double s
    for q in range(n):
        if f[q] == INFINITY:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INFINITY
            z[1] = INFINITY
            continue
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INFINITY
    if k < 0:
        for q in range(n):
            d[q] = INFINITY
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) * (q - v[k]) + f[v[k]]


def edt_squared(mask):
    """Exact squared Euclidean distance from every pixel to the nearest set pixel."""
    m = np.asarray(mask, dtype=bool)
    cdef Py_ssize_t H = m.shape[0], W = m.shape[1], r, c
    out_arr = np.where(m, 0.0, INFINITY)
    cdef double[:, ::1] g = out_arr
    cdef Py_ssize_t n = H if H > W else W
    cdef double[::1] f = np.empty(n)
    cdef double[::1] d = np.empty(n)
    cdef double[::1] z = np.empty(n + 1)
    cdef Py_ssize_t[::1] v = np.empty(n, dtype=np.intp)
    if H == 0 or W == 0:
        return out_arr
    with nogil:
        for c in range(W):
            for r in range(H):
                f[r] = g[r, c]
            _dt1d(&f[0], &d[0], H, &v[0], &z[0])
            for r in range(H):
                g[r, c] = d[r]
        for r in range(H):
            for c in range(W):
                f[c] = g[r, c]
            _dt1d(&f[0], &d[0], W, &v[0], &z[0])
            for c in range(W):
                g[r, c] = d[c]
    return out_arr


def fill_polygon(xs, ys, Py_ssize_t height, Py_ssize_t width):
    """Pixel-center even-odd scanline fill; centers on an edge count as inside."""
    cdef double[::1] px = np.ascontiguousarray(xs, dtype=np.float64)
    cdef double[::1] py = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t nv = px.shape[0]
    out_arr = np.zeros((height, width), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef double[::1] xing = np.empty(nv + 1)
    cdef Py_ssize_t r, c, i, j, m, a
    cdef double yc, x0, y0, x1, y1, t, lo, hi
    cdef Py_ssize_t c0, c1
    if nv < 3:
        return out_arr
    with nogil:
        for r in range(height):
            yc = r + 0.5
            m = 0
            for i in range(nv):
                j = i + 1 if i + 1 < nv else 0
                x0 = px[i]; y0 = py[i]; x1 = px[j]; y1 = py[j]
                if (y0 <= yc < y1) or (y1 <= yc < y0):
                    xing[m] = x0 + (yc - y0) * (x1 - x0) / (y1 - y0)
                    m += 1
            # insertion sort; m is small
            for i in range(1, m):
                t = xing[i]
                a = i - 1
                while a >= 0 and xing[a] > t:
                    xing[a + 1] = xing[a]
                    a -= 1
                xing[a + 1] = t
            i = 0
            while i + 1 < m:
                lo = xing[i]; hi = xing[i + 1]
                c0 = <Py_ssize_t>ceil(lo - 0.5)
                c1 = <Py_ssize_t>floor(hi - 0.5)
                if c0 < 0:
                    c0 = 0
                if c1 > width - 1:
                    c1 = width - 1
                for c in range(c0, c1 + 1):
                    out[r, c] = 1
                i += 2
            # horizontal edges lying on this scanline
            for i in range(nv):
                j = i + 1 if i + 1 < nv else 0
                if py[i] == yc and py[j] == yc:
                    lo = px[i] if px[i] < px[j] else px[j]
                    hi = px[j] if px[i] < px[j] else px[i]
                    c0 = <Py_ssize_t>ceil(lo - 0.5)
                    c1 = <Py_ssize_t>floor(hi - 0.5)
                    if c0 < 0:
                        c0 = 0
                    if c1 > width - 1:
                        c1 = width - 1
                    for c in range(c0, c1 + 1):
                        out[r, c] = 1
        # vertices sitting exactly on a pixel center
        for i in range(nv):
            x0 = px[i] - 0.5
            y0 = py[i] - 0.5
            if x0 == floor(x0) and y0 == floor(y0):
                c = <Py_ssize_t>x0
                r = <Py_ssize_t>y0
                if 0 <= r < height and 0 <= c < width:
                    out[r, c] = 1
    return out_arr


cdef bint _segment_inside(const cnp.uint8_t[:, ::1] mask, double ax, double ay,
                          double bx, double by) noexcept nogil:
    cdef Py_ssize_t H = mask.shape[0], W = mask.shape[1]
    cdef double dx = bx - ax, dy = by - ay
    cdef double length = sqrt(dx * dx + dy * dy)
    cdef Py_ssize_t n = <Py_ssize_t>ceil(length / 0.25) + 1, s, r, c
    cdef double t
    if n < 2:
        n = 2
    for s in range(n):
        t = s / <double>(n - 1)
        c = <Py_ssize_t>floor(ax + dx * t)
        r = <Py_ssize_t>floor(ay + dy * t)
        if r < 0 or r >= H or c < 0 or c >= W or mask[r, c] == 0:
            return False
    return True


def longest_inside_chord(mask, pts):
    """Index pair (i, j) of the longest segment between ``pts`` lying in ``mask``.

    Returns ``(-1, -1)`` when no pair exists.
    """
    cdef const cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    p = np.ascontiguousarray(pts, dtype=np.float64)
    ii, jj = np.triu_indices(p.shape[0], 1)
    if ii.size == 0:
        return -1, -1
    lengths = np.hypot(p[jj, 0] - p[ii, 0], p[jj, 1] - p[ii, 1])
    order = np.argsort(-lengths, kind="stable")
    cdef const double[:, ::1] pv = p
    cdef const Py_ssize_t[::1] o = order.astype(np.intp)
    cdef const Py_ssize_t[::1] iv = ii.astype(np.intp)
    cdef const Py_ssize_t[::1] jv = jj.astype(np.intp)
    cdef Py_ssize_t k, a, b
    with nogil:
        for k in range(o.shape[0]):
            a = iv[o[k]]
            b = jv[o[k]]
            if _segment_inside(m, pv[a, 0], pv[a, 1], pv[b, 0], pv[b, 1]):
                with gil:
                    return int(a), int(b)
    return -1, -1


def widest_cross_chord(mask, pts, origin, u, double length, double tol):
    """Pair (i, j) of ``pts`` on opposite sides of the axis ``origin + t*u`` (0 <= t <= length)
    whose along-axis offsets differ by at most ``tol`` and whose segment lies in ``mask``,
    maximising the perpendicular extent. Returns ``(-1, -1)`` when none qualifies.
    """
    cdef const cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
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
    extent = s[ii] - s[jj]
    order = np.argsort(-extent, kind="stable")
    cdef const double[:, ::1] pv = p
    cdef const Py_ssize_t[::1] o = order.astype(np.intp)
    cdef const Py_ssize_t[::1] iv = ii.astype(np.intp)
    cdef const Py_ssize_t[::1] jv = jj.astype(np.intp)
    cdef Py_ssize_t k, a, b
    with nogil:
        for k in range(o.shape[0]):
            a = iv[o[k]]
            b = jv[o[k]]
            if _segment_inside(m, pv[a, 0], pv[a, 1], pv[b, 0], pv[b, 1]):
                with gil:
                    return int(a), int(b)
    return -1, -1
