"""Invariant densities, ergodic decomposition and spectra of Ulam matrices.

Components are found combinatorially: recurrent classes are the closed
strongly connected components of the support graph of ``K``.  Each class
carries its stationary density, its period and its cyclic classes; transient
cells carry absorption weights onto the classes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    CyclicClassMismatch,
    DimensionMismatch,
    MonotonicityViolation,
    NoConvergence,
)
from .ulam import TransferMatrix, write_density

TOL = 1e-12
TOL_SPARSE = 1e-12


def _csr(K):
    if isinstance(K, TransferMatrix):
        return K.matrix
    if sp.issparse(K):
        return sp.csr_matrix(K)
    return sp.csr_matrix(np.asarray(K, dtype=float))


def _residual(h, M):
    return float(np.mean(np.abs(M.T @ h - h)))


def invariant_density(K, tol=TOL, max_iter=200_000):
    """Invariant density by Cesaro-averaged power iteration from uniform.

    Power iteration is tried first; for periodic spectra it never settles,
    so the running Cesaro mean is checked as well (its residual decays like
    ``1/n``).  When neither meets ``tol`` within ``max_iter`` the direct
    null-space solve of ``h (K - I) = 0`` restricted to the densities is
    used as an accelerator and verified against the same residual.

    Parameters
    ----------
    K : TransferMatrix or array_like
    tol : float
        Bound on ``(1/N) sum |hK - h|``.
    max_iter : int

    Returns
    -------
    numpy.ndarray
        Density with grid mean 1.

    Raises
    ------
    NoConvergence
    """
    M = _csr(K)
    N = M.shape[0]
    MT = M.T.tocsr()
    u = np.ones(N)
    acc = np.zeros(N)
    best = math.inf
    check = 16
    for n in range(1, max_iter + 1):
        acc += u
        u = MT @ u
        if n % check == 0 or n == max_iter:
            r = _residual(u, M)
            if r <= tol:
                return u / u.mean()
            h = acc / n
            rc = _residual(h, M)
            if rc <= tol:
                return h / h.mean()
            best = min(best, r, rc)
            check = min(check * 2, 4096)
            if n >= 64 * N:
                break
    h = _direct_invariant(M)
    if h is not None and _residual(h, M) <= max(tol, 1e-13):
        return h
    raise NoConvergence(f"invariant density not converged (residual {best:.3g})", best)


def _direct_invariant(M):
    """Mixture of the per-class stationary densities weighted by absorption of uniform."""
    dec = ergodic_decomposition(M, _with_densities=False)
    lam = absorption_weights(dec, np.ones(M.shape[0]))
    h = np.zeros(M.shape[0])
    for lk, comp in zip(lam, dec.components):
        h += lk * _class_density(M, comp.support)
    s = h.mean()
    return h / s if s > 0 else None


def _class_density(M, support):
    """Stationary density of a closed class via a dense or sparse linear solve."""
    N = M.shape[0]
    idx = np.asarray(support)
    B = M[idx][:, idx]
    k = len(idx)
    if k == 1:
        pi = np.ones(1)
    else:
        A = (B.T - sp.identity(k, format="csr")).tolil()
        A[0, :] = 1.0
        rhs = np.zeros(k)
        rhs[0] = 1.0
        A = A.tocsc()
        if k <= 2048:
            pi = np.linalg.solve(A.toarray(), rhs)
        else:
            from scipy.sparse.linalg import spsolve

            pi = spsolve(A, rhs)
        pi = np.clip(pi, 0.0, None)
        for _ in range(4):
            pi = B.T @ pi
        pi /= pi.sum()
    h = np.zeros(N)
    h[idx] = pi * N
    return h


@dataclass(frozen=True)
class ErgodicComponent:
    support: np.ndarray
    density: np.ndarray
    period: int
    cyclic_classes: tuple


@dataclass(frozen=True)
class ErgodicDecomposition:
    """Recurrent classes, transient cells and absorption weights of ``K``."""

    components: tuple
    transient_cells: np.ndarray
    absorption_matrix: np.ndarray
    maximal_support_reached: bool = True
    N: int = 0

    @property
    def r(self):
        return len(self.components)

    def labels(self):
        """Cell labels: component index, or -1 for transient cells."""
        lab = np.full(self.N, -1)
        for k, c in enumerate(self.components):
            lab[c.support] = k
        return lab


def _period(B):
    """Period of an irreducible 0/1 graph via BFS levels: gcd of level(i)+1-level(j)."""
    k = B.shape[0]
    level = np.full(k, -1)
    level[0] = 0
    frontier = [0]
    indptr, indices = B.indptr, B.indices
    while frontier:
        nxt = []
        for i in frontier:
            for j in indices[indptr[i]:indptr[i + 1]]:
                if level[j] < 0:
                    level[j] = level[i] + 1
                    nxt.append(j)
        frontier = nxt
    rows = np.repeat(np.arange(k), np.diff(indptr))
    diffs = level[rows] + 1 - level[indices]
    d = 0
    for v in np.unique(np.abs(diffs)):
        d = math.gcd(d, int(v))
    return max(d, 1), level


def ergodic_decomposition(K, tol_sparse=TOL_SPARSE, _with_densities=True):
    """Finite ergodic decomposition of a stochastic matrix.

    Parameters
    ----------
    K : TransferMatrix or array_like
    tol_sparse : float
        Entries above this are graph edges.

    Returns
    -------
    ErgodicDecomposition
    """
    M = _csr(K)
    N = M.shape[0]
    G = M.copy()
    G.data = np.where(G.data > tol_sparse, 1.0, 0.0)
    G.eliminate_zeros()
    n_scc, lab = connected_components(G, directed=True, connection="strong")
    # a class is closed iff it has no edge leaving it
    rows = np.repeat(np.arange(N), np.diff(G.indptr))
    leaving = lab[rows] != lab[G.indices]
    open_cls = np.zeros(n_scc, dtype=bool)
    open_cls[lab[rows[leaving]]] = True
    closed = [c for c in range(n_scc) if not open_cls[c]]
    # order components by their smallest cell for reproducible labels
    supports = sorted((np.flatnonzero(lab == c) for c in closed), key=lambda s: s[0])

    comps = []
    for supp in supports:
        B = G[supp][:, supp].tocsr()
        d, level = _period(B)
        classes = tuple(supp[(level % d) == c] for c in range(d))
        dens = _class_density(M, supp) if _with_densities else np.zeros(N)
        comps.append(ErgodicComponent(supp, dens, d, classes))

    recurrent = np.zeros(N, dtype=bool)
    for c in comps:
        recurrent[c.support] = True
    transient = np.flatnonzero(~recurrent)
    W = _absorption(M, comps, transient, N)
    return ErgodicDecomposition(tuple(comps), transient, W, True, N)


def _absorption(M, comps, transient, N):
    """Absorption probabilities ``w_i[k]`` by a linear solve on the transient block."""
    r = len(comps)
    W = np.zeros((N, r))
    for k, c in enumerate(comps):
        W[c.support, k] = 1.0
    if len(transient) == 0 or r == 0:
        return W
    Q = M[transient][:, transient]
    R = np.zeros((len(transient), r))
    for k, c in enumerate(comps):
        R[:, k] = np.asarray(M[transient][:, c.support].sum(axis=1)).ravel()
    A = sp.identity(len(transient), format="csc") - Q.tocsc()
    if len(transient) <= 2048:
        X = np.linalg.solve(A.toarray(), R)
    else:
        from scipy.sparse.linalg import splu

        X = splu(A).solve(R)
    X = np.clip(X, 0.0, None)
    X /= X.sum(axis=1, keepdims=True)
    W[transient] = X
    return W


def absorption_weights(decomposition, u):
    """``lambda_k(u) = sum_i (u_i / N) w_i[k]``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (decomposition.N,):
        raise DimensionMismatch(f"density of length {u.shape} for N={decomposition.N}")
    return (u / decomposition.N) @ decomposition.absorption_matrix


def periodic_structure(decomposition, K, tol=1e-8):
    """Cyclic-class densities ``g_{k,c}`` and the permutation ``rho``.

    Returns
    -------
    densities : list of numpy.ndarray
        All ``g_{k,c}`` in component-major order.
    rho : list of int
        ``rho[i]`` is the index of ``g_i K``.

    Raises
    ------
    CyclicClassMismatch
    """
    M = _csr(K)
    MT = M.T.tocsr()
    dens, rho = [], []
    for comp in decomposition.components:
        base = len(dens)
        d = comp.period
        for c, cls in enumerate(comp.cyclic_classes):
            g = np.zeros(decomposition.N)
            g[cls] = comp.density[cls]
            g *= decomposition.N / g.sum()
            dens.append(g)
            rho.append(base + (c + 1) % d)
    for i, g in enumerate(dens):
        if np.max(np.abs(MT @ g - dens[rho[i]])) > tol * max(1.0, np.max(g)):
            raise CyclicClassMismatch(f"cyclic class {i} is not mapped onto class {rho[i]}")
    return dens, rho


def spectral_gap(K, k_top=2, max_iter=5000, tol=1e-10):
    """Top ``k_top`` eigenvalue moduli, descending.

    Dense eigensolve for ``N <= 512``; otherwise orthogonal (subspace)
    iteration on ``K^T``.
    """
    M = _csr(K)
    N = M.shape[0]
    if N <= 512:
        ev = scipy.linalg.eigvals(M.toarray())
        mod = np.sort(np.abs(ev))[::-1]
        return mod[:k_top]
    rng = np.random.default_rng(0)
    p = min(N, k_top + 4)
    Q, _ = np.linalg.qr(rng.standard_normal((N, p)))
    MT = M.T.tocsr()
    prev = None
    for _ in range(max_iter):
        Z = MT @ Q
        Q, _ = np.linalg.qr(Z)
        T = Q.T @ (MT @ Q)
        mod = np.sort(np.abs(np.linalg.eigvals(T)))[::-1][:k_top]
        if prev is not None and np.max(np.abs(mod - prev)) < tol:
            return mod
        prev = mod
    raise NoConvergence("subspace iteration did not converge", float(np.max(np.abs(mod - prev))))


def maximal_support_check(K, decomposition, n_max=None, support=None):
    """Adjoint iterates of ``1_S`` for ``S`` the union of component supports.

    Returns
    -------
    a : numpy.ndarray
        ``a_n = (1/N) sum_i (K^n 1_S)_i`` for ``n = 0..n_max``.
    verdict : bool
        ``min_i (K^{n_max} 1_S)_i > 1 - 1e-8``.

    Raises
    ------
    MonotonicityViolation
    """
    M = _csr(K)
    N = M.shape[0]
    if n_max is None:
        n_max = 4 * N
    if support is None:
        support = np.concatenate([c.support for c in decomposition.components]) if decomposition.components else []
    g = np.zeros(N)
    g[np.asarray(support, dtype=int)] = 1.0
    a = [g.mean()]
    for _ in range(n_max):
        g_new = M @ g
        if np.any(g_new < g - 1e-10):
            raise MonotonicityViolation("adjoint iterates of 1_S decreased")
        g = np.minimum(np.maximum(g_new, g), 1.0)
        a.append(g.mean())
        if g.min() > 1 - 1e-14:
            a.extend([a[-1]] * (n_max + 1 - len(a)))
            break
    return np.array(a), bool(g.min() > 1 - 1e-8)


def decomposition_report(decomposition, out_dir, prefix="component", K=None):
    """Write density CSVs, the absorption matrix and the JSON summary.

    With ``K`` the summary also carries the permutation ``rho`` of the
    cyclic-class densities (the asymptotic-periodicity signature), or
    ``null`` when the classes fail to map onto each other within tolerance.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    comps = []
    for k, c in enumerate(decomposition.components):
        name = f"{prefix}_{k}.csv"
        write_density(c.density, out / name)
        comps.append({"support": [int(i) for i in c.support], "period": int(c.period), "density_file": name,
                      "cyclic_classes": [[int(i) for i in cls] for cls in c.cyclic_classes]})
    absorb = "absorption.csv"
    with open(out / absorb, "w") as fh:
        fh.write("cell," + ",".join(f"w{k}" for k in range(decomposition.r)) + "\n")
        for i, row in enumerate(decomposition.absorption_matrix):
            fh.write(f"{i}," + ",".join(f"{v:.17g}" for v in row) + "\n")
    report = {
        "components": comps,
        "transient_cells": [int(i) for i in decomposition.transient_cells],
        "absorption_matrix_file": absorb,
    }
    if K is not None:
        try:
            report["rho"] = [int(i) for i in periodic_structure(decomposition, K)[1]]
        except CyclicClassMismatch:
            report["rho"] = None
    with open(out / "decomposition.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report
