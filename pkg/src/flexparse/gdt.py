"""Generalized distance transforms for concave quadratic score spreading.

dt1d_max computes, in one linear sweep, out[p] = max_q values[q] + a*(p-q)^2
+ b*(p-q) for a < 0, using the lower-envelope parabola algorithm with
explicit argmax recovery. dt2d_max separates the 2-D problem into a row
pass followed by a column pass.

The 2-D transform evaluates the exact maximum over every grid cell: the
mean offset r is folded into the per-axis linear coefficient (a real-valued
shift of the parabola vertex), so no cell is ever excluded and non-integer
offsets need no rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = ["QuadPenalty", "dt1d_max", "dt2d_max"]

_NEG = -1e30  # envelope boundary sentinel, never a score


@dataclass(frozen=True)
class QuadPenalty:
    """Separable concave quadratic ax*(dx-rx)^2 + bx*(dx-rx) + ay*(dy-ry)^2 + by*(dy-ry).

    dx, dy are the components of (source cell - output cell) and
    (rx, ry) = offset. ax and ay must be strictly negative.
    """

    ax: float
    bx: float
    ay: float
    by: float
    offset: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not (self.ax < 0 and self.ay < 0):
            raise ValueError("quadratic coefficients must be strictly negative")


@njit(cache=True, nogil=True)
def _envelope(vals, a, b, out, arg):
    """out[p] = max_q vals[q] + a*(p-q)^2 + b*(p-q); ties go to the smallest q."""
    n = vals.shape[0]
    v = np.empty(n, np.int64)
    z = np.empty(n + 1, np.float64)
    k = 0
    v[0] = 0
    z[0] = _NEG
    z[1] = -_NEG
    for q in range(1, n):
        # crossing point of parabola q with the current envelope top v[k];
        # to the right of s, q dominates (a < 0 makes the difference decreasing)
        while True:
            q0 = v[k]
            s = (vals[q] - vals[q0] + a * (q * q - q0 * q0) - b * (q - q0)) / (2.0 * a * (q - q0))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = -_NEG
    k = 0
    for p in range(n):
        while z[k + 1] < p:  # strict: at an exact boundary the earlier (smaller) q wins
            k += 1
        q = v[k]
        d = p - q
        out[p] = vals[q] + a * d * d + b * d
        arg[p] = q


@njit(cache=True, nogil=True)
def _transpose(src, dst):
    # blocked to keep both sides cache-resident
    h, w = src.shape
    B = 32
    for r0 in range(0, h, B):
        r1 = min(r0 + B, h)
        for c0 in range(0, w, B):
            c1 = min(c0 + B, w)
            for r in range(r0, r1):
                for c in range(c0, c1):
                    dst[c, r] = src[r, c]


@njit(cache=True, nogil=True)
def _dt2d(grid, ax, bx_eff, ay, by_eff):
    h, w = grid.shape
    tmp = np.empty((h, w), np.float64)
    argx = np.empty((h, w), np.int64)
    for r in range(h):
        _envelope(grid[r], ax, bx_eff, tmp[r], argx[r])
    tmp_t = np.empty((w, h), np.float64)
    _transpose(tmp, tmp_t)
    out_t = np.empty((w, h), np.float64)
    argy_t = np.empty((w, h), np.int64)
    for c in range(w):
        _envelope(tmp_t[c], ay, by_eff, out_t[c], argy_t[c])
    out = np.empty((h, w), np.float64)
    _transpose(out_t, out)
    argy = np.empty((h, w), np.int64)
    B = 32
    for c0 in range(0, w, B):
        c1 = min(c0 + B, w)
        for r0 in range(0, h, B):
            r1 = min(r0 + B, h)
            for c in range(c0, c1):
                for r in range(r0, r1):
                    argy[r, c] = argy_t[c, r]
    return out, argy, argx


def dt1d_max(values, a: float, b: float):
    """Maximize values[q] + a*(p-q)^2 + b*(p-q) over q, for every p.

    Returns (out, argmax); ties break toward the smallest q. a must be
    strictly negative.
    """
    if not a < 0:
        raise ValueError("quadratic coefficient must be strictly negative")
    vals = np.ascontiguousarray(values, dtype=np.float64)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("values must be a non-empty 1-D array")
    out = np.empty_like(vals)
    arg = np.empty(vals.shape, np.int64)
    _envelope(vals, float(a), float(b), out, arg)
    return out, arg


def dt2d_max(grid, penalty: QuadPenalty):
    """Maximize grid[l_k] + penalty(l_k - l_i) over all source cells l_k.

    The displacement is measured source-minus-output, shifted by
    penalty.offset: with d = l_k - l_i - r the added score is
    ax*dx^2 + bx*dx + ay*dy^2 + by*dy. Returns (out, argmax) where
    argmax[y, x] = (source_y, source_x); ties resolve to the smallest
    source row, then the smallest source column within it.
    """
    if not isinstance(penalty, QuadPenalty):
        raise ValueError("penalty must be a QuadPenalty")
    g = np.ascontiguousarray(grid, dtype=np.float64)
    if g.ndim != 2 or g.size == 0:
        raise ValueError("grid must be a non-empty 2-D array")
    rx, ry = float(penalty.offset[0]), float(penalty.offset[1])
    ax, bx, ay, by = float(penalty.ax), float(penalty.bx), float(penalty.ay), float(penalty.by)
    # per axis, with u = q - p (source minus output):
    #   a*(u-r)^2 + b*(u-r) = a*(p-q)^2 + (2ar - b)*(p-q) + (ar^2 - br)
    out, argy, argx = _dt2d(g, ax, 2.0 * ax * rx - bx, ay, 2.0 * ay * ry - by)
    out = out + (ax * rx * rx - bx * rx) + (ay * ry * ry - by * ry)
    cols = np.arange(g.shape[1])[None, :]
    arg = np.stack([argy, argx[argy, cols]], axis=-1)
    return out, arg
