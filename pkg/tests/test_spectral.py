import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import CYCLE2, HALVES, THREE_STATE, block_diag_halves, cycle
from transferlab import gallery
from transferlab.errors import DimensionMismatch
from transferlab.spectral import (
    absorption_weights,
    decomposition_report,
    ergodic_decomposition,
    invariant_density,
    maximal_support_check,
    periodic_structure,
    spectral_gap,
)
from transferlab.ulam import build_ulam


def supports(dec):
    return sorted(sorted(int(i) for i in c.support) for c in dec.components)


class TestInvariantDensity:
    def test_doubly_stochastic(self):
        assert np.allclose(invariant_density(block_diag_halves()), 1.0, atol=1e-12)

    def test_absorbing_state(self):
        assert np.allclose(invariant_density([[1, 0], [.5, .5]]), [2, 0], atol=1e-10)

    def test_two_cycle(self):
        assert np.allclose(invariant_density(CYCLE2), [1, 1], atol=1e-10)

    def test_residual_bound(self):
        K = build_ulam(gallery.get("expanding_ifs_23").system(), 128)
        h = invariant_density(K)
        assert np.mean(np.abs(K.matrix.T @ h - h)) <= 1e-12
        assert h.mean() == pytest.approx(1.0, abs=1e-12)


class TestDecomposition:
    def test_two_blocks(self):
        dec = ergodic_decomposition(block_diag_halves())
        assert dec.r == 2
        assert supports(dec) == [[0, 1], [2, 3]]
        assert [c.period for c in dec.components] == [1, 1]
        assert dec.transient_cells.size == 0

    def test_two_cycle(self):
        dec = ergodic_decomposition(CYCLE2)
        (c,) = dec.components
        assert c.period == 2
        assert sorted(tuple(int(i) for i in cls) for cls in c.cyclic_classes) == [(0,), (1,)]

    def test_absorption(self):
        dec = ergodic_decomposition(THREE_STATE)
        assert supports(dec) == [[1], [2]]
        assert list(dec.transient_cells) == [0]
        assert np.allclose(dec.absorption_matrix[0], [.5, .5])

    def test_labels(self):
        assert list(ergodic_decomposition(THREE_STATE).labels()) == [-1, 0, 1]


class TestAbsorptionWeights:
    def test_invariant_density_stays(self):
        dec = ergodic_decomposition(block_diag_halves())
        for k, c in enumerate(dec.components):
            assert np.allclose(absorption_weights(dec, c.density), np.eye(2)[k])

    def test_examples(self):
        assert np.allclose(absorption_weights(ergodic_decomposition(THREE_STATE), [3, 0, 0]), [.5, .5])
        assert np.allclose(absorption_weights(ergodic_decomposition(block_diag_halves()), np.ones(4)), [.5, .5])

    def test_dimension(self):
        with pytest.raises(DimensionMismatch):
            absorption_weights(ergodic_decomposition(THREE_STATE), [1, 1])


class TestPeriodicStructure:
    def test_aperiodic(self):
        dec = ergodic_decomposition(HALVES)
        dens, rho = periodic_structure(dec, HALVES)
        assert rho == [0] and np.allclose(dens[0], 1)

    def test_two_cycle(self):
        dens, rho = periodic_structure(ergodic_decomposition(CYCLE2), CYCLE2)
        assert sorted(map(tuple, dens)) == [(0, 2), (2, 0)]
        assert sorted(rho) == [0, 1] and rho[0] == 1

    def test_four_cycle(self):
        K = cycle(4)
        dens, rho = periodic_structure(ergodic_decomposition(K), K)
        assert sorted(tuple(np.flatnonzero(g)) for g in dens) == [(0,), (1,), (2,), (3,)]
        i, seen = 0, []
        for _ in range(4):
            seen.append(i)
            i = rho[i]
        assert sorted(seen) == [0, 1, 2, 3] and i == 0


class TestSpectralGap:
    def test_rank_one(self):
        assert np.allclose(spectral_gap(HALVES), [1, 0], atol=1e-12)

    def test_four_cycle(self):
        assert np.allclose(spectral_gap(cycle(4), 4), 1, atol=1e-12)

    def test_doubling(self):
        K = np.array([[.5, .5, 0, 0], [0, 0, .5, .5]] * 2)
        assert np.allclose(spectral_gap(K, 4), [1, 0, 0, 0], atol=1e-7)

    def test_iterative_path_agrees(self):
        K = build_ulam(gallery.get("two_sink_additive").system(), 600)
        dense = np.sort(np.abs(np.linalg.eigvals(K.dense())))[::-1][:3]
        assert np.allclose(spectral_gap(K, 3), dense, atol=1e-6)


class TestMaximalSupport:
    def test_one_step_absorption(self):
        dec = ergodic_decomposition(THREE_STATE)
        a, ok = maximal_support_check(THREE_STATE, dec, 5)
        assert a[1] == pytest.approx(1.0) and ok

    def test_no_transient(self):
        dec = ergodic_decomposition(block_diag_halves())
        a, ok = maximal_support_check(block_diag_halves(), dec, 3)
        assert a[0] == 1.0 and ok

    def test_isolated_cell_outside(self):
        K = np.eye(2)
        a, ok = maximal_support_check(K, ergodic_decomposition(K), 6, support=[0])
        assert np.allclose(a, .5) and not ok

    @pytest.mark.parametrize("eid", ["two_sink_additive", "mult_contraction", "direct_sum_expanding_contracting"])
    def test_gallery_nondecreasing(self, eid):
        K = build_ulam(gallery.get(eid).system(), 64)
        a, _ = maximal_support_check(K, ergodic_decomposition(K), 200)
        assert np.all(np.diff(a) >= -1e-12)


def test_report_files(tmp_path):
    rep = decomposition_report(ergodic_decomposition(THREE_STATE), tmp_path)
    assert rep["transient_cells"] == [0]
    assert {p.name for p in tmp_path.iterdir()} == {
        "component_0.csv", "component_1.csv", "absorption.csv", "decomposition.json"}


# ---------------------------------------------------------------------------
# brute-force rational oracle


def random_rational(rng, N):
    W = rng.integers(0, 4, (N, N)) * (rng.random((N, N)) < 0.35)
    for i in range(N):
        if W[i].sum() == 0:
            W[i, rng.integers(N)] = 1
    return [[Fraction(int(w), int(W[i].sum())) for w in W[i]] for i in range(N)]


def solve(A, b):
    """Gaussian elimination over the rationals; ``A`` square and invertible."""
    n = len(A)
    M = [list(A[i]) + list(b[i]) for i in range(n)]
    for c in range(n):
        p = next(r for r in range(c, n) if M[r][c] != 0)
        M[c], M[p] = M[p], M[c]
        piv = M[c][c]
        M[c] = [v / piv for v in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [a - f * e for a, e in zip(M[r], M[c])]
    return [row[n:] for row in M]


def oracle(K):
    N = len(K)
    reach = [[i == j or K[i][j] > 0 for j in range(N)] for i in range(N)]
    for k in range(N):
        for i in range(N):
            for j in range(N):
                reach[i][j] = reach[i][j] or (reach[i][k] and reach[k][j])
    recurrent = [i for i in range(N) if all(reach[j][i] for j in range(N) if reach[i][j])]
    classes = []
    for i in recurrent:
        if not any(i in c for c in classes):
            classes.append(sorted(j for j in recurrent if reach[i][j]))
    out = []
    for C in classes:
        # closed walks of length <= |C| cover every simple cycle
        B = [[K[i][j] > 0 for j in C] for i in C]
        P, g = B, 0
        for n in range(1, len(C) + 1):
            if any(P[a][a] for a in range(len(C))):
                g = math.gcd(g, n)
            P = [[any(P[a][c] and B[c][b] for c in range(len(C))) for b in range(len(C))] for a in range(len(C))]
        # stationary vector: replace one balance equation by normalisation
        m = len(C)
        A = [[(K[C[j]][C[i]] - (i == j)) for j in range(m)] for i in range(m)]
        A[-1] = [Fraction(1)] * m
        h = [row[0] for row in solve(A, [[Fraction(0)]] * (m - 1) + [[Fraction(N)]])]
        out.append((C, g, h))
    transient = [i for i in range(N) if i not in recurrent]
    absorb = {}
    if transient:
        Q = [[(i == j) - K[i][j] for j in transient] for i in transient]
        R = [[sum(K[i][j] for j in C) for C, _, _ in out] for i in transient]
        for i, row in zip(transient, solve(Q, R)):
            absorb[i] = row
    return out, transient, absorb


def test_rational_oracle_corpus():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        N = int(rng.integers(1, 9))
        Kq = random_rational(rng, N)
        comps, transient, absorb = oracle(Kq)
        dec = ergodic_decomposition(np.array(Kq, dtype=float))
        got = {tuple(int(i) for i in c.support): c for c in dec.components}
        assert sorted(got) == sorted(tuple(C) for C, _, _ in comps)
        order = [tuple(C) for C, _, _ in comps]
        for C, period, h in comps:
            c = got[tuple(C)]
            assert c.period == period
            assert np.allclose(c.density[C], [float(v) for v in h], atol=1e-9)
        assert sorted(int(i) for i in dec.transient_cells) == transient
        cols = [next(k for k, c in enumerate(dec.components) if tuple(int(i) for i in c.support) == key)
                for key in order]
        for i, row in absorb.items():
            assert np.allclose(dec.absorption_matrix[i][cols], [float(v) for v in row], atol=1e-9)


@pytest.mark.parametrize("eid", [e.id for e in gallery.list_gallery() if not e.exploratory])
def test_gallery_components_are_disjoint_and_invariant(eid):
    K = build_ulam(gallery.get(eid).system(), 64)
    dec = ergodic_decomposition(K)
    seen = np.zeros(64, dtype=int)
    for c in dec.components:
        seen[c.support] += 1
        assert np.mean(np.abs(K.matrix.T @ c.density - c.density)) <= 1e-11
    seen[dec.transient_cells] += 1
    assert np.all(seen == 1)
    assert np.allclose(dec.absorption_matrix.sum(axis=1), 1.0)
