"""Compiled orbit-stepping loops.

The tables are dense padded arrays built by :class:`StepTables`; the loops
advance a batch of orbits through one chunk of pre-drawn uniforms and write
every visited position to a buffer.  No fastmath: results are bit-identical
to the IEEE evaluation order written here.
"""

import math

import numpy as np
from numba import njit

W_REFINE = 2.0 ** -32
REFINE_DIGITS = 256.0

KIND_CODE = {"deterministic": 0, "ifs": 0, "additive": 1, "multiplicative": 2, "blend": 3}


class StepTables:
    """Dense per-branch piece tables plus noise and pin data."""

    def __init__(self, system):
        maps = system.maps
        P = max(m.n_pieces for m in maps)
        nb = len(maps)
        self.kind = KIND_CODE[system.kind]
        w = np.asarray(system.weights if system.kind in ("ifs", "deterministic") else (1.0,), dtype=float)
        self.cum = np.cumsum(w)
        self.cum[-1] = 1.0
        self.bps = np.full((nb, P + 1), np.inf)
        self.slopes = np.zeros((nb, P))
        self.icpts = np.zeros((nb, P))
        self.npieces = np.zeros(nb, dtype=np.int64)
        self.wrap = np.zeros(nb, dtype=np.bool_)
        pv = [(b, x, y) for b, m in enumerate(maps) for x, y in m.point_values]
        self.pv_branch = np.array([p[0] for p in pv], dtype=np.int64)
        self.pv_x = np.array([p[1] for p in pv], dtype=float)
        self.pv_y = np.array([p[2] for p in pv], dtype=float)
        for b, m in enumerate(maps):
            n = m.n_pieces
            self.bps[b, :n + 1] = m.breakpoints
            self.slopes[b, :n] = m.slopes
            self.icpts[b, :n] = m.intercepts
            self.npieces[b] = n
            self.wrap[b] = m.wrap
        if system.noise is not None:
            nz = system.noise
            pos = nz.values > 0
            self.nz_cum = np.ascontiguousarray(nz._cum[:-1][pos])
            self.nz_lo = np.ascontiguousarray(nz.breakpoints[:-1][pos])
            self.nz_val = np.ascontiguousarray(nz.values[pos])
        else:
            self.nz_cum = np.zeros(1)
            self.nz_lo = np.zeros(1)
            self.nz_val = np.ones(1)
        self.eps = float(system.epsilon) if system.epsilon is not None else 0.0
        self.pinned = np.array(system.pinned, dtype=float)

    def args(self):
        return (self.kind, self.cum, self.bps, self.slopes, self.icpts, self.npieces, self.wrap,
                self.pv_branch, self.pv_x, self.pv_y, self.nz_cum, self.nz_lo, self.nz_val,
                self.eps, self.pinned)


@njit(cache=True)
def _branch(cum, t):
    # searchsorted(cum, t, side="right"), clipped
    k = 0
    n = cum.shape[0]
    while k < n - 1 and cum[k] <= t:
        k += 1
    return k


@njit(cache=True)
def _piece(bps, b, n, x):
    k = 0
    while k < n - 1 and bps[b, k + 1] <= x:
        k += 1
    return k


@njit(cache=True)
def _mod1(y):
    r = y - math.floor(y)
    if r >= 1.0:
        r = 0.0
    return r


@njit(cache=True)
def _eval(bps, slopes, icpts, npieces, wrap, pv_branch, pv_x, pv_y, b, x):
    k = _piece(bps, b, npieces[b], x)
    y = slopes[b, k] * x + icpts[b, k]
    if wrap[b]:
        y = _mod1(y)
    for q in range(pv_x.shape[0]):
        if pv_branch[q] == b and pv_x[q] == x:
            y = pv_y[q]
    return y


@njit(cache=True)
def _ppf(nz_cum, nz_lo, nz_val, u):
    n = nz_cum.shape[0]
    k = 0
    while k < n - 1 and nz_cum[k + 1] <= u:
        k += 1
    t = nz_lo[k] + (u - nz_cum[k]) / nz_val[k]
    return min(max(t, 0.0), 1.0)


@njit(cache=True)
def run_float(x, draws, out, kind, cum, bps, slopes, icpts, npieces, wrap,
              pv_branch, pv_x, pv_y, nz_cum, nz_lo, nz_val, eps, pinned):
    """Plain double-precision orbits; ``out[r, s]`` is the position after step r."""
    m, S = draws.shape[0], draws.shape[1]
    for r in range(m):
        for s in range(S):
            xs = x[s]
            u = draws[r, s, 0]
            if kind == 0:
                b = _branch(cum, u)
                y = _eval(bps, slopes, icpts, npieces, wrap, pv_branch, pv_x, pv_y, b, xs)
            else:
                t = _ppf(nz_cum, nz_lo, nz_val, u)
                f0 = _eval(bps, slopes, icpts, npieces, wrap, pv_branch, pv_x, pv_y, 0, xs)
                if kind == 1:
                    y = _mod1(f0 + t)
                elif kind == 2:
                    y = (1.0 - eps * t) * f0
                else:
                    y = t * xs + (1.0 - t) * f0
            for q in range(pinned.shape[0]):
                if xs == pinned[q]:
                    y = pinned[q]
            x[s] = y
            out[r, s] = y


@njit(cache=True)
def run_generic(lo, w, draws, out, cum, bps, slopes, icpts, npieces, wrap):
    """Lazy-precision orbits of atomic systems on interval states ``[lo, lo + w)``."""
    m, S = draws.shape[0], draws.shape[1]
    for r in range(m):
        for s in range(S):
            l = lo[s]
            ww = w[s]
            b = _branch(cum, draws[r, s, 0])
            n = npieces[b]
            k = _piece(bps, b, n, l)
            right = bps[b, k + 1]
            left_len = right - l
            if ww > left_len and k < n - 1:
                if draws[r, s, 1] * ww >= left_len:
                    ww = ww - left_len
                    l = right
                    k += 1
                else:
                    ww = left_len
            sl = slopes[b, k]
            a = sl * l + icpts[b, k]
            nw = abs(sl) * ww
            nl = a - nw if sl < 0 else a
            if wrap[b]:
                nl = nl - math.floor(nl)
                if nl + nw > 1.0:
                    left_len = 1.0 - nl
                    if draws[r, s, 2] * nw >= left_len:
                        nw = nw - left_len
                        nl = 0.0
                    else:
                        nw = left_len
                if nl >= 1.0:
                    nl = 0.0
            nl = min(max(nl, 0.0), 1.0)
            if nw > W_REFINE:
                nw = nw / REFINE_DIGITS
                nl = nl + math.floor(draws[r, s, 3] * REFINE_DIGITS) * nw
            floor_w = 4.0 * np.spacing(nl)
            if nw < floor_w:
                nw = floor_w
            lo[s] = nl
            w[s] = nw
            out[r, s] = nl
