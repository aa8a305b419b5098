"""Exact transfer of step functions under piecewise affine random maps.

For an IFS (or deterministic map) with affine, non-constant branches the
transfer operator sends step functions to step functions, only on a finer
set of breakpoints.  Iterating it exactly keeps the sub-cell structure that
the Ulam projection averages away; that structure is what separates
constrictive from merely asymptotically constrictive operators, or mixing
from exact densities, for atomic kernels.

The cost is the breakpoint count: rotations grow it linearly in the number
of steps, non-commuting contractions geometrically.  Callers cap it with
``max_pieces``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotRepresentable
from .system import ATOMIC_KINDS

MERGE_TOL = 1e-12


def _clean_breaks(points):
    pts = np.sort(np.concatenate([[0.0, 1.0], np.clip(points, 0.0, 1.0)]))
    keep = np.concatenate([[True], np.diff(pts) > MERGE_TOL])
    pts = pts[keep]
    pts[-1] = 1.0
    if len(pts) >= 2 and pts[-1] - pts[-2] <= MERGE_TOL:
        pts = np.delete(pts, -2)
    return pts


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Piecewise constant function: ``values[k]`` on ``[breaks[k], breaks[k+1])``."""

    breaks: np.ndarray
    values: np.ndarray

    @classmethod
    def from_grid(cls, u):
        u = np.asarray(u, dtype=float)
        return cls(np.arange(len(u) + 1) / len(u), u.copy()).coalesce()

    @classmethod
    def indicator(cls, intervals, normalize=False):
        """Indicator of a union of disjoint intervals ``[(a, b), ...]``."""
        pts = _clean_breaks(np.ravel(intervals))
        mids = 0.5 * (pts[:-1] + pts[1:])
        vals = np.zeros(len(mids))
        for a, b in intervals:
            vals[(mids > a) & (mids < b)] = 1.0
        f = cls(pts, vals)
        if normalize:
            f = cls(pts, vals / f.integral())
        return f.coalesce()

    @property
    def lengths(self):
        return np.diff(self.breaks)

    @property
    def n_pieces(self):
        return len(self.values)

    def __call__(self, x):
        k = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, self.n_pieces - 1)
        return self.values[k]

    def coalesce(self):
        v = self.values
        scale = np.max(np.abs(v)) if len(v) else 0.0
        v = np.where(np.abs(v) <= 1e-13 * scale, 0.0, v)
        same = np.abs(np.diff(v)) <= 1e-13 * max(scale, 1e-300)
        keep_break = np.concatenate([[True], ~same, [True]])
        keep_val = np.concatenate([[True], ~same])
        return StepFunction(self.breaks[keep_break], v[keep_val])

    def integral(self):
        return float(np.dot(self.values, self.lengths))

    def l1_norm(self):
        return float(np.dot(np.abs(self.values), self.lengths))

    def cumulative(self, x):
        """``int_0^x f dm`` (piecewise linear, evaluated exactly)."""
        F = np.concatenate([[0.0], np.cumsum(self.values * self.lengths)])
        return np.interp(x, self.breaks, F)

    def mass_on(self, intervals):
        intervals = np.asarray(intervals, dtype=float).reshape(-1, 2)
        return float(np.sum(self.cumulative(intervals[:, 1]) - self.cumulative(intervals[:, 0])))

    def top_mass(self, delta):
        """Largest integral over a set of measure ``delta`` (greedy on values)."""
        order = np.argsort(-self.values, kind="stable")
        lens = self.lengths[order]
        vals = self.values[order]
        cum = np.cumsum(lens)
        k = int(np.searchsorted(cum, delta, side="left"))
        full = float(np.dot(vals[:k], lens[:k]))
        if k < len(vals):
            prev = cum[k - 1] if k > 0 else 0.0
            full += vals[k] * (delta - prev)
        return full

    def to_grid(self, N):
        edges = np.arange(N + 1) / N
        return N * np.diff(self.cumulative(edges))

    def pair_grid(self, g):
        """``int g f dm`` for a grid observable ``g`` (cell values)."""
        g = np.asarray(g, dtype=float)
        edges = np.arange(len(g) + 1) / len(g)
        return float(np.dot(g, np.diff(self.cumulative(edges))))

    def __add__(self, other):
        pts = _clean_breaks(np.concatenate([self.breaks, other.breaks]))
        mids = 0.5 * (pts[:-1] + pts[1:])
        return StepFunction(pts, self(mids) + other(mids)).coalesce()

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def scaled(self, c):
        return StepFunction(self.breaks, c * self.values)


def _pieces(system):
    """Yield ``(weight, lo, hi, slope, intercept, wrap)`` for every branch piece."""
    if system.kind not in ATOMIC_KINDS:
        raise NotRepresentable("exact step transfer needs an ifs or deterministic system")
    for fmap, w in zip(system.branches, system.weights):
        if not fmap.exact:
            raise NotRepresentable("tabulated maps are not exact")
        b = fmap.breakpoints
        for k in range(fmap.n_pieces):
            yield w, b[k], b[k + 1], fmap.slopes[k], fmap.intercepts[k], fmap.wrap


def supports_exact_transfer(system):
    if system.kind not in ATOMIC_KINDS or not system.exact_maps:
        return False
    return all(m.exact for m in system.branches)


def push(system, f):
    """One exact step of the annealed transfer operator on a step function."""
    pieces = list(_pieces(system))
    images = []
    for w, lo, hi, s, c, wrap in pieces:
        if s == 0.0:
            if f.mass_on([(lo, hi)]) != 0.0 or np.any(f(np.linspace(lo, hi, 7)[1:-1]) != 0):
                raise NotRepresentable("constant branch carries mass (atom)")
            continue
        inside = f.breaks[(f.breaks > lo) & (f.breaks < hi)]
        pts = s * np.concatenate([[lo, hi], inside]) + c
        images.append(np.mod(pts, 1.0) if wrap else pts)
    breaks = _clean_breaks(np.concatenate(images) if images else np.zeros(0))
    mids = 0.5 * (breaks[:-1] + breaks[1:])
    out = np.zeros(len(mids))
    for w, lo, hi, s, c, wrap in pieces:
        if s == 0.0:
            continue
        y0, y1 = sorted((s * lo + c, s * hi + c))
        shifts = range(int(np.floor(y0)), int(np.ceil(y1))) if wrap else [0]
        for m in shifts:
            x = (mids + m - c) / s
            ok = (x >= lo) & (x < hi)
            if hi == 1.0:
                ok |= x == 1.0
            out[ok] += w * f(x[ok]) / abs(s)
    g = StepFunction(breaks, out).coalesce()
    # contraction below the merge tolerance drops mass into a null piece
    if abs(g.integral() - f.integral()) > 1e-9 * max(f.l1_norm(), 1e-300):
        raise NotRepresentable("mass concentrated below the breakpoint resolution")
    return g


def pull(system, g):
    """One exact step of the adjoint (Koopman average) ``x -> sum_b w_b g(f_b(x))``."""
    pieces = list(_pieces(system))
    pts = [np.array([lo, hi]) for _, lo, hi, *_ in pieces]
    for w, lo, hi, s, c, wrap in pieces:
        if s == 0.0:
            continue
        y0, y1 = sorted((s * lo + c, s * hi + c))
        shifts = range(int(np.floor(y0)), int(np.ceil(y1)) + 1) if wrap else [0]
        for m in shifts:
            x = (g.breaks + m - c) / s
            pts.append(x[(x > lo) & (x < hi)])
    breaks = _clean_breaks(np.concatenate(pts))
    mids = 0.5 * (breaks[:-1] + breaks[1:])
    out = np.zeros(len(mids))
    for w, lo, hi, s, c, wrap in pieces:
        ok = (mids >= lo) & (mids < hi)
        y = s * mids[ok] + c
        if wrap:
            y = np.mod(y, 1.0)
        out[ok] += w * g(y)
    return StepFunction(breaks, out).coalesce()


def orbit(system, f, n, max_pieces=1 << 21):
    """Exact iterates ``f, Lf, ..., L^n f``; stops early past ``max_pieces``."""
    out = [f]
    for _ in range(n):
        if f.n_pieces > max_pieces:
            break
        f = push(system, f)
        out.append(f)
    return out
