"""Pure numpy implementation of the per-level tracking solve.

Mirrors the native kernel exactly (same window rule, same status logic, same
iteration accounting); only the float summation order differs, so the two
backends agree to roughly 1e-9 on realistic inputs.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "pure"

_OK = 0
_OOB = 1
_SMALL_EIGEN = 2
_HIGH_RESIDUAL = 3
_NOT_CONVERGED = 4


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear samples at coordinates guaranteed inside [0, w-1] x [0, h-1]."""
    h, w = img.shape
    x0 = x.astype(np.intp)  # truncation == floor for the non-negative coords
    y0 = y.astype(np.intp)
    fx = x - x0
    fy = y - y0
    flat = img.ravel()
    i00 = y0 * w + x0
    dx = (x0 < w - 1).astype(np.intp)  # 0 at the right edge: repeat the sample
    dy = (y0 < h - 1).astype(np.intp) * w
    v00 = flat[i00]
    v01 = flat[i00 + dx]
    v10 = flat[i00 + dy]
    v11 = flat[i00 + dy + dx]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top)


def refine_level(
    prev: np.ndarray,
    next_: np.ndarray,
    gx: np.ndarray,
    gy: np.ndarray,
    pts: np.ndarray,
    flows: np.ndarray,
    status: np.ndarray,
    iters: np.ndarray,
    residual: np.ndarray,
    window_radius: int,
    max_iter: int,
    epsilon: float,
    min_eig_norm: float,
    max_residual: float,
    check_residual: bool,
) -> None:
    """One pyramid level of the iterative least-squares flow solve.

    Operates in place on ``flows``/``status``/``iters``/``residual`` for every
    point whose status is Ok; everything else is left untouched.
    """
    h, w = prev.shape
    r = window_radius
    act = np.nonzero(status == _OK)[0]
    if act.size == 0:
        return
    iters[act] = 0

    cx = pts[act, 0]
    cy = pts[act, 1]
    inside = (cx >= r) & (cy >= r) & (cx <= w - 1 - r) & (cy <= h - 1 - r)
    status[act[~inside]] = _OOB
    act = act[inside]
    if act.size == 0:
        return
    cx = pts[act, 0]
    cy = pts[act, 1]

    k = 2 * r + 1
    offs = np.arange(-r, r + 1, dtype=np.float64)
    offx = np.tile(offs, k)
    offy = np.repeat(offs, k)
    X = cx[:, None] + offx[None, :]
    Y = cy[:, None] + offy[None, :]
    gxp = _bilinear(gx, X, Y)
    gyp = _bilinear(gy, X, Y)
    ip = _bilinear(prev, X, Y)
    gxx = (gxp * gxp).sum(axis=1)
    gxy = (gxp * gyp).sum(axis=1)
    gyy = (gyp * gyp).sum(axis=1)
    min_eig = 0.5 * (gxx + gyy - np.sqrt((gxx - gyy) ** 2 + 4.0 * gxy * gxy))
    if (min_eig < -1e-6).any():
        raise AssertionError("gradient matrix lost positive semi-definiteness")
    well = min_eig / (k * k) >= min_eig_norm  # per-pixel normalization
    status[act[~well]] = _SMALL_EIGEN
    act = act[well]
    if act.size == 0:
        return
    cx, cy, X, Y = cx[well], cy[well], X[well], Y[well]
    gxp, gyp, ip = gxp[well], gyp[well], ip[well]
    gxx, gxy, gyy = gxx[well], gxy[well], gyy[well]
    det = gxx * gyy - gxy * gxy

    n = act.size
    fx = flows[act, 0].copy()
    fy = flows[act, 1].copy()
    last_x = fx.copy()  # flow whose window was last verified inside
    last_y = fy.copy()
    final_status = np.zeros(n, dtype=np.int8)
    converged = np.zeros(n, dtype=bool)
    itcount = np.zeros(n, dtype=np.int32)
    last_step = np.zeros(n)
    live = np.arange(n)

    for it in range(1, max_iter + 1):
        px = cx[live] + fx[live]
        py = cy[live] + fy[live]
        ins = (px >= r) & (py >= r) & (px <= w - 1 - r) & (py <= h - 1 - r)
        dead = live[~ins]
        final_status[dead] = _OOB
        fx[dead] = last_x[dead]
        fy[dead] = last_y[dead]
        itcount[dead] = it - 1
        live = live[ins]
        if live.size == 0:
            break
        last_x[live] = fx[live]
        last_y[live] = fy[live]
        d = ip[live] - _bilinear(next_, X[live] + fx[live, None], Y[live] + fy[live, None])
        bx = (gxp[live] * d).sum(axis=1)
        by = (gyp[live] * d).sum(axis=1)
        sx = (gyy[live] * bx - gxy[live] * by) / det[live]
        sy = (gxx[live] * by - gxy[live] * bx) / det[live]
        fx[live] += sx
        fy[live] += sy
        sn = np.sqrt(sx * sx + sy * sy)
        last_step[live] = sn
        itcount[live] = it
        done = sn < epsilon
        converged[live[done]] = True
        live = live[~done]
        if live.size == 0:
            break

    ok = final_status == _OK
    px = cx + fx
    py = cy + fy
    ins = (px >= r) & (py >= r) & (px <= w - 1 - r) & (py <= h - 1 - r)
    bad = ok & ~ins
    final_status[bad] = _OOB
    fx[bad] = last_x[bad]
    fy[bad] = last_y[bad]

    ok = final_status == _OK
    nc = ok & ~converged & (last_step >= 0.5)
    final_status[nc] = _NOT_CONVERGED

    if check_residual:
        sel = np.nonzero(final_status == _OK)[0]
        if sel.size:
            d = ip[sel] - _bilinear(next_, X[sel] + fx[sel, None], Y[sel] + fy[sel, None])
            res = np.abs(d).mean(axis=1)
            residual[act[sel]] = res
            final_status[sel[res > max_residual]] = _HIGH_RESIDUAL

    flows[act, 0] = fx
    flows[act, 1] = fy
    status[act] = final_status
    iters[act] = itcount
