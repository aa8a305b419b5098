"""Ulam discretisation of annealed transfer operators.

The unit interval is cut into ``N`` equal cells and the operator is
replaced by the row-stochastic matrix

    K[i, j] = probability that a uniform point of cell i lands in cell j
              after one random step.

Densities are row vectors of cell averages (``u K`` pushes mass forward);
observables are column vectors (``K g`` is the grid adjoint).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    DimensionMismatch,
    DomainEscape,
    EmptySupport,
    RowDefectTooLarge,
    ZeroSlopeOverlap,
)
from .system import ATOMIC_KINDS, affine_in_t, apply_random
from . import rng as _rng

DROP_TOL = 1e-14
QUADRATURE_DEFECT_TOL = 1e-6


@dataclass(frozen=True)
class Partition:
    """Uniform partition of [0, 1] into ``N`` cells ``[i/N, (i+1)/N)``."""

    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("a partition needs N >= 2 cells")

    @property
    def edges(self):
        return np.arange(self.N + 1) / self.N

    @property
    def centers(self):
        return (np.arange(self.N) + 0.5) / self.N

    def cell_of(self, x):
        """Cell index of a point; x = 1 belongs to the last cell."""
        return np.clip(np.floor(np.asarray(x, dtype=float) * self.N).astype(int), 0, self.N - 1)


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    matrix: sp.csr_matrix
    row_defect: np.ndarray
    build_method: str
    flagged_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def N(self):
        return self.matrix.shape[0]

    @property
    def nnz(self):
        return self.matrix.nnz

    def dense(self):
        return self.matrix.toarray()

    def __eq__(self, other):
        if not isinstance(other, TransferMatrix):
            return NotImplemented
        a, b = self.matrix.tocoo(), other.matrix.tocoo()
        return (
            self.build_method == other.build_method
            and a.shape == b.shape
            and a.nnz == b.nnz
            and (self.matrix != other.matrix).nnz == 0
        )

    __hash__ = None


def _finish(rows, cols, vals, N, method, check_defect=False, flagged=()):
    """Assemble triplets, drop tiny entries, record defects, renormalise rows."""
    K = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    data = K.data
    indptr = K.indptr
    defect = np.empty(N)
    keep = data >= DROP_TOL
    for i in range(N):
        seg = slice(indptr[i], indptr[i + 1])
        defect[i] = abs(1.0 - math.fsum(data[seg][keep[seg]]))
    if check_defect and np.any(defect > QUADRATURE_DEFECT_TOL):
        worst = int(np.argmax(defect))
        raise RowDefectTooLarge(f"row {worst} has defect {defect[worst]:.3e}")
    K.data = np.where(keep, data, 0.0)
    K.eliminate_zeros()
    data, indptr = K.data, K.indptr
    for i in range(N):
        seg = slice(indptr[i], indptr[i + 1])
        s = math.fsum(data[seg])
        if s > 0:
            data[seg] = data[seg] / s
    defect.setflags(write=False)
    return TransferMatrix(K, defect, method, np.asarray(sorted(flagged), dtype=int))


def _spread(lo, hi, mass, N, wrap, rows, cols, vals, i):
    """Distribute ``mass`` uniformly over [lo, hi] into cells."""
    if hi <= lo:
        raise ZeroSlopeOverlap("degenerate image interval")
    jlo = math.floor(lo * N)
    jhi = math.ceil(hi * N) - 1
    js = np.arange(jlo, max(jhi, jlo) + 1)
    left = np.maximum(js / N, lo)
    right = np.minimum((js + 1) / N, hi)
    frac = np.clip(right - left, 0.0, None) / (hi - lo)
    if wrap:
        js = np.mod(js, N)
    elif js[0] < 0 or js[-1] >= N:
        raise DomainEscape("image leaves [0, 1] on an unwrapped branch")
    rows.extend([i] * len(js))
    cols.extend(js.tolist())
    vals.extend((mass * frac).tolist())


def _atom_cell(y, N, wrap):
    if not math.isfinite(y):
        raise ZeroSlopeOverlap("non-finite value on a constant piece")
    if wrap:
        y = y % 1.0
    if y < 0.0 or y > 1.0:
        raise DomainEscape("constant piece outside [0, 1]")
    return min(int(math.floor(y * N)), N - 1)


def build_ulam_ifs(system, partition):
    """Exact Ulam matrix of an IFS or deterministic piecewise affine system.

    Every branch piece maps a cell sub-interval affinely, so the landing
    probabilities are ratios of interval lengths; no quadrature is involved.
    """
    if system.kind not in ATOMIC_KINDS:
        raise ValueError("build_ulam_ifs needs an ifs or deterministic system")
    N = partition.N
    rows, cols, vals = [], [], []
    for fmap, w in zip(system.branches, system.weights):
        b = fmap.breakpoints
        for k in range(fmap.n_pieces):
            a0, a1 = b[k], b[k + 1]
            s, c = fmap.slopes[k], fmap.intercepts[k]
            i0 = min(int(math.floor(a0 * N)), N - 1)
            i1 = min(int(math.ceil(a1 * N)) - 1, N - 1)
            for i in range(i0, i1 + 1):
                x0 = max(a0, i / N)
                x1 = min(a1, (i + 1) / N)
                if x1 <= x0:
                    continue
                mass = w * N * (x1 - x0)
                if s == 0.0:
                    rows.append(i)
                    cols.append(_atom_cell(c, N, fmap.wrap))
                    vals.append(mass)
                    continue
                y0, y1 = s * x0 + c, s * x1 + c
                _spread(min(y0, y1), max(y0, y1), mass, N, fmap.wrap, rows, cols, vals, i)
    return _finish(np.array(rows), np.array(cols), np.array(vals, dtype=float), N, "exact_preimage")


def _row_masses(system, xs, edges):
    """Landing masses per cell for each quadrature node ``xs`` (shape (q, N))."""
    a, b = affine_in_t(system, xs)
    noise = system.noise
    N = len(edges) - 1
    out = np.zeros((len(xs), N))
    if system.kind == "additive":
        G = noise.periodic_cdf(edges[None, :] - a[:, None])
        return np.diff(G, axis=1)
    for r, (ar, br) in enumerate(zip(a, b)):
        if br == 0.0:
            out[r, min(int(math.floor(ar * N)), N - 1)] = 1.0
            continue
        F = noise.cdf((edges - ar) / br)
        out[r] = np.diff(F) if br > 0 else -np.diff(F)
    return out


def build_ulam_kernel(system, partition, quadrature=8):
    """Ulam matrix of a noise-driven system by Gauss-Legendre quadrature in x.

    For each node the noise law is integrated exactly over every target cell
    (the kernel slice is piecewise constant in the noise variable).  Nodes
    where the kernel is atomic (``f_t(x)`` independent of t) put their whole
    mass in one cell.
    """
    if system.kind in ATOMIC_KINDS:
        raise ValueError("build_ulam_kernel needs a noise-driven system")
    N = partition.N
    edges = partition.edges
    gx, gw = np.polynomial.legendre.leggauss(quadrature)
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw
    bps = system.base.breakpoints
    rows, cols, vals = [], [], []
    for i in range(N):
        lo, hi = edges[i], edges[i + 1]
        inner = bps[(bps > lo) & (bps < hi)]
        cuts = np.concatenate([[lo], inner, [hi]])
        xs = (cuts[:-1, None] + np.diff(cuts)[:, None] * gx[None, :]).ravel()
        ws = (np.diff(cuts)[:, None] * gw[None, :]).ravel() * N
        row = ws @ _row_masses(system, xs, edges)
        nz = np.nonzero(row)[0]
        rows.extend([i] * len(nz))
        cols.extend(nz.tolist())
        vals.extend(row[nz].tolist())
    return _finish(
        np.array(rows), np.array(cols), np.array(vals), N, f"quadrature({quadrature})", check_defect=True
    )


def build_ulam_monte_carlo(system, partition, samples, seed=0):
    """Sampling estimate of the Ulam matrix: ``samples`` uniform points per cell."""
    N = partition.N
    g = _rng.generator(seed, stream_id=0xA11)
    u = g.random((N, samples))
    t = g.random((N, samples))
    if system.kind == "ifs":
        t = t  # branch chosen through the weight partition inside apply_random
    elif system.kind not in ATOMIC_KINDS:
        t = system.noise.ppf(t)
    x = (np.arange(N)[:, None] + u) / N
    y = apply_random(system, t, x)
    j = partition.cell_of(y)
    rows = np.repeat(np.arange(N), samples)
    vals = np.full(rows.shape, 1.0 / samples)
    return _finish(rows, j.ravel(), vals, N, f"monte_carlo({samples})", flagged=range(N))


def build_ulam(system, partition, quadrature=8):
    """Dispatch on the system kind."""
    if isinstance(partition, int):
        partition = Partition(partition)
    if system.kind in ATOMIC_KINDS:
        return build_ulam_ifs(system, partition)
    return build_ulam_kernel(system, partition, quadrature)


def _as_csr(K):
    return K.matrix if isinstance(K, TransferMatrix) else sp.csr_matrix(K)


def apply(K, u):
    """Push a density forward one step: ``u'_j = sum_i u_i K[i, j]``."""
    M = _as_csr(K)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != M.shape[0]:
        raise DimensionMismatch(f"density of length {u.shape[-1]} for N={M.shape[0]}")
    return np.asarray((M.T @ u.T).T)


def apply_adjoint(K, g):
    """Pull an observable back one step: ``g'_i = sum_j K[i, j] g_j``."""
    M = _as_csr(K)
    g = np.asarray(g, dtype=float)
    if g.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"observable of length {g.shape[0]} for N={M.shape[0]}")
    return np.asarray(M @ g)


def cesaro(K, u, n):
    """Cesaro average ``(1/n) sum_{i<n} u K^i`` by a running sum."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cur = np.asarray(u, dtype=float)
    acc = cur.copy()
    for _ in range(n - 1):
        cur = apply(K, cur)
        acc += cur
    return acc / n


@dataclass(frozen=True, eq=False)
class Restriction:
    matrix: sp.csr_matrix
    cells: np.ndarray
    stochastic: bool


def restrict(K, S, tol=1e-10):
    """Restrict ``K`` to the cells ``S`` (``K_S = 1_S K 1_S``)."""
    cells = np.unique(np.asarray(list(S), dtype=int))
    if cells.size == 0:
        raise EmptySupport("restriction to an empty cell set")
    M = _as_csr(K)[cells][:, cells].tocsr()
    sums = np.asarray(M.sum(axis=1)).ravel()
    return Restriction(M, cells, bool(np.all(np.abs(sums - 1.0) <= tol)))


def inner(a, b):
    """Grid pairing ``(1/N) sum a_i b_i``."""
    a = np.asarray(a, dtype=float)
    return float(np.dot(a, b) / a.shape[-1])


def write_matrix(K, path):
    """Write the text format: header ``ULAM 1 N nnz method`` then ``i j value``."""
    coo = K.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"ULAM 1 {K.N} {coo.nnz} {K.build_method}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_matrix(path):
    with open(path) as fh:
        header = fh.readline().split()
        if header[:2] != ["ULAM", "1"]:
            raise ValueError("not a ULAM matrix file")
        N, nnz, method = int(header[2]), int(header[3]), header[4]
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    rows = data[:, 0].astype(int)
    cols = data[:, 1].astype(int)
    M = sp.csr_matrix((data[:, 2], (rows, cols)), shape=(N, N))
    M.sort_indices()
    sums = np.asarray(M.sum(axis=1)).ravel()
    return TransferMatrix(M, np.abs(1.0 - sums), method)


def write_density(u, path):
    with open(path, "w") as fh:
        fh.write("cell,value\n")
        for i, v in enumerate(np.asarray(u, dtype=float)):
            fh.write(f"{i},{v:.17g}\n")


def read_density(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1]
