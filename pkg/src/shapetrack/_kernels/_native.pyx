# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Native per-level tracking solve.

Behaviourally identical to the numpy fallback in ``pure.py``; the point loop
runs with the GIL released.  All taps of a window share one fractional
offset, so the bilinear weights and the clamped second-sample indices are
hoisted out of the tap loops.  Window radius is capped at 15 so the per-point
patches fit in fixed stack buffers.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, sqrt

cnp.import_array()

BACKEND_NAME = "native"

cdef enum:
    MAX_WIN = 31  # 2 * 15 + 1
    MAX_PATCH = 961  # MAX_WIN ** 2

cdef enum:
    ST_OK = 0
    ST_OOB = 1
    ST_SMALL_EIGEN = 2
    ST_HIGH_RESIDUAL = 3
    ST_NOT_CONVERGED = 4


cdef inline bint _window_inside(double cx, double cy, int r, Py_ssize_t w, Py_ssize_t h) noexcept nogil:
    return cx >= r and cy >= r and cx <= w - 1 - r and cy <= h - 1 - r


cdef inline void _fill_indices(double c, int r, Py_ssize_t limit, Py_ssize_t* i0, Py_ssize_t* i1, double* frac) noexcept nogil:
    """First/second sample index per tap along one axis plus the shared
    fractional weight.  The second index is clamped so an exactly-integral
    coordinate at the raster edge stays in bounds (its weight is zero)."""
    cdef Py_ssize_t base = <Py_ssize_t>floor(c)
    cdef int j
    cdef Py_ssize_t a
    frac[0] = c - <double>base
    for j in range(2 * r + 1):
        a = base + j - r
        i0[j] = a
        i1[j] = a + 1 if a + 1 <= limit - 1 else limit - 1


def refine_level(
    const double[:, ::1] prev,
    const double[:, ::1] next_,
    const double[:, ::1] gx,
    const double[:, ::1] gy,
    const double[:, ::1] pts,
    double[:, ::1] flows,
    cnp.int8_t[::1] status,
    cnp.int32_t[::1] iters,
    double[::1] residual,
    int window_radius,
    int max_iter,
    double epsilon,
    double min_eig_norm,
    double max_residual,
    bint check_residual,
):
    """One pyramid level of the iterative least-squares flow solve.

    In-place on ``flows``/``status``/``iters``/``residual`` for points whose
    status is Ok; all other entries are left untouched.
    """
    if window_radius < 1 or window_radius > 15:
        raise ValueError("native kernel supports window_radius in 1..15")

    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t h = prev.shape[0]
    cdef Py_ssize_t w = prev.shape[1]
    cdef int r = window_radius
    cdef int k = 2 * r + 1
    cdef int area = k * k

    cdef double ip[MAX_PATCH]
    cdef double gxp[MAX_PATCH]
    cdef double gyp[MAX_PATCH]
    cdef Py_ssize_t x0[MAX_WIN]
    cdef Py_ssize_t x1[MAX_WIN]
    cdef Py_ssize_t y0[MAX_WIN]
    cdef Py_ssize_t y1[MAX_WIN]

    cdef Py_ssize_t i, ra, rb
    cdef int dx, dy, it, j
    cdef double cx, cy, sx, sy
    cdef double gxx, gxy, gyy, det, min_eig
    cdef double fx_w, fy_w, w00, w01, w10, w11
    cdef double a, b, v, d, bx, by, acc
    cdef double fx, fy, last_x, last_y, step_norm
    cdef bint converged
    cdef bint psd_violation = False
    cdef const double* prow0
    cdef const double* prow1

    with nogil:
        for i in range(n):
            if status[i] != ST_OK:
                continue
            iters[i] = 0
            cx = pts[i, 0]
            cy = pts[i, 1]
            if not _window_inside(cx, cy, r, w, h):
                status[i] = ST_OOB
                continue

            # Fixed window on the previous frame: patch + gradient matrix.
            _fill_indices(cx, r, w, x0, x1, &fx_w)
            _fill_indices(cy, r, h, y0, y1, &fy_w)
            w00 = (1.0 - fx_w) * (1.0 - fy_w)
            w01 = fx_w * (1.0 - fy_w)
            w10 = (1.0 - fx_w) * fy_w
            w11 = fx_w * fy_w
            gxx = 0.0
            gxy = 0.0
            gyy = 0.0
            j = 0
            for dy in range(k):
                ra = y0[dy]
                rb = y1[dy]
                for dx in range(k):
                    a = w00 * gx[ra, x0[dx]] + w01 * gx[ra, x1[dx]] + w10 * gx[rb, x0[dx]] + w11 * gx[rb, x1[dx]]
                    b = w00 * gy[ra, x0[dx]] + w01 * gy[ra, x1[dx]] + w10 * gy[rb, x0[dx]] + w11 * gy[rb, x1[dx]]
                    v = w00 * prev[ra, x0[dx]] + w01 * prev[ra, x1[dx]] + w10 * prev[rb, x0[dx]] + w11 * prev[rb, x1[dx]]
                    gxp[j] = a
                    gyp[j] = b
                    ip[j] = v
                    gxx += a * a
                    gxy += a * b
                    gyy += b * b
                    j += 1
            min_eig = 0.5 * (gxx + gyy - sqrt((gxx - gyy) * (gxx - gyy) + 4.0 * gxy * gxy))
            if min_eig < -1e-6:
                psd_violation = True
                break
            if min_eig / area < min_eig_norm:
                status[i] = ST_SMALL_EIGEN
                continue
            det = gxx * gyy - gxy * gxy

            fx = flows[i, 0]
            fy = flows[i, 1]
            last_x = fx
            last_y = fy
            converged = False
            step_norm = 0.0
            for it in range(1, max_iter + 1):
                if not _window_inside(cx + fx, cy + fy, r, w, h):
                    status[i] = ST_OOB
                    fx = last_x
                    fy = last_y
                    iters[i] = it - 1
                    break
                last_x = fx
                last_y = fy
                _fill_indices(cx + fx, r, w, x0, x1, &fx_w)
                _fill_indices(cy + fy, r, h, y0, y1, &fy_w)
                w00 = (1.0 - fx_w) * (1.0 - fy_w)
                w01 = fx_w * (1.0 - fy_w)
                w10 = (1.0 - fx_w) * fy_w
                w11 = fx_w * fy_w
                bx = 0.0
                by = 0.0
                j = 0
                for dy in range(k):
                    prow0 = &next_[y0[dy], 0]
                    prow1 = &next_[y1[dy], 0]
                    for dx in range(k):
                        d = ip[j] - (w00 * prow0[x0[dx]] + w01 * prow0[x1[dx]] + w10 * prow1[x0[dx]] + w11 * prow1[x1[dx]])
                        bx += gxp[j] * d
                        by += gyp[j] * d
                        j += 1
                sx = (gyy * bx - gxy * by) / det
                sy = (gxx * by - gxy * bx) / det
                fx += sx
                fy += sy
                step_norm = sqrt(sx * sx + sy * sy)
                iters[i] = it
                if step_norm < epsilon:
                    converged = True
                    break

            if status[i] == ST_OK:
                if not _window_inside(cx + fx, cy + fy, r, w, h):
                    status[i] = ST_OOB
                    fx = last_x
                    fy = last_y
                elif not converged and step_norm >= 0.5:
                    status[i] = ST_NOT_CONVERGED
                elif check_residual:
                    _fill_indices(cx + fx, r, w, x0, x1, &fx_w)
                    _fill_indices(cy + fy, r, h, y0, y1, &fy_w)
                    w00 = (1.0 - fx_w) * (1.0 - fy_w)
                    w01 = fx_w * (1.0 - fy_w)
                    w10 = (1.0 - fx_w) * fy_w
                    w11 = fx_w * fy_w
                    acc = 0.0
                    j = 0
                    for dy in range(k):
                        prow0 = &next_[y0[dy], 0]
                        prow1 = &next_[y1[dy], 0]
                        for dx in range(k):
                            acc += fabs(ip[j] - (w00 * prow0[x0[dx]] + w01 * prow0[x1[dx]] + w10 * prow1[x0[dx]] + w11 * prow1[x1[dx]]))
                            j += 1
                    acc /= <double>area
                    residual[i] = acc
                    if acc > max_residual:
                        status[i] = ST_HIGH_RESIDUAL

            flows[i, 0] = fx
            flows[i, 1] = fy

    if psd_violation:
        raise AssertionError("gradient matrix lost positive semi-definiteness")
