"""Acceptance criteria, one test each.

The terminal summary prints one pass/fail line per criterion (see
``conftest.pytest_terminal_summary``).
"""

import itertools
import time

import numpy as np
import pytest

from test_spectral import oracle, random_rational
from transferlab import gallery
from transferlab.classify import (
    AGAINST,
    KERNEL,
    ClassifyConfig,
    classify,
    dstar_curve,
    fixed_set_tail_mass,
    mixing_exactness_probe,
    straube_probe,
    top_sum,
)
from transferlab.cli import main
from transferlab.montecarlo import basin_survey, duality_check
from transferlab.spectral import ergodic_decomposition, invariant_density
from transferlab.ulam import build_ulam

LADDER = (64, 128, 256)


def halves(N):
    return np.where((np.arange(N) + 0.5) / N < 0.5, 1.0, -1.0)


def test_criterion_01_gallery_regression():
    t0 = time.perf_counter()
    bad = []
    for e in gallery.list_gallery():
        if e.exploratory:
            continue
        rep = classify(e.system(), ClassifyConfig(ladder=LADDER))
        if not rep.hierarchy_ok:
            bad.append((e.id, "hierarchy", rep.conflicts))
        for tag, want in e.expected.items():
            if rep.verdicts[tag] != f"evidence_{want}":
                bad.append((e.id, tag, rep.verdicts[tag]))
        r = ergodic_decomposition(build_ulam(e.system(), LADDER[-1])).r
        if e.expected_components == ">=2" and r < 2 or isinstance(e.expected_components, int) and r != e.expected_components:
            bad.append((e.id, "components", r))
    elapsed = time.perf_counter() - t0
    print(f"gallery regression: {elapsed:.1f} s")
    assert not bad, bad
    assert elapsed <= 600


def test_criterion_02_bernoulli_mixing_not_exact():
    s = gallery.get("bernoulli_convolution").system()
    for N in (16, 64, 256):
        K = build_ulam(s, N)
        comp = ergodic_decomposition(K).components[0]
        m, e = mixing_exactness_probe(K, comp, 30, system=s)
        strong = e.curves["strong"]
        assert len(strong) >= 21
        assert np.all(np.abs(strong[:21] - 1.0) <= 1e-12)
        weak = m.curves["weak"]
        assert np.nanmin(weak[:31]) < 1e-3


def test_criterion_03_uniform_invariant_densities():
    ids = ["deterministic_doubling", "bernoulli_convolution", "expanding_ifs_23",
           "rotations_irrational_diff", "rotations_rational_diff", "rotations_rational",
           "deterministic_rational_rotation"]
    for eid in ids:
        s = gallery.get(eid).system()
        for N in LADDER:
            h = invariant_density(build_ulam(s, N))
            assert np.max(np.abs(h - 1.0)) <= 1e-10, (eid, N)


def test_criterion_04_straube_failure_mult_contraction():
    K = build_ulam(gallery.get("mult_contraction").system(), 256)
    r = straube_probe(K, (1 / 16,), 16)
    alpha = r.certificate["alpha_hat"]["0.0625"]
    # oracle: dense matrix powers and an explicit sort
    D = K.dense()
    best = max(top_sum(np.ones(256) @ np.linalg.matrix_power(D, n), 16) / 256 for n in range(17))
    assert alpha == pytest.approx(best, abs=1e-12)
    assert alpha >= 0.99


def test_criterion_05_dstar_failure_alternating_halves():
    s = gallery.get("alternating_halves").system()
    for N in LADDER:
        curve = dstar_curve(build_ulam(s, N), 50)
        assert np.all(np.abs(curve[1:] - 1.0) <= 1e-10), N


def test_criterion_06_doeblin_failure_by_null_set():
    rep = classify(gallery.get("additive_pinned_zero").system(), ClassifyConfig(ladder=LADDER))
    d = rep.get("D")
    assert d.verdict == AGAINST and d.provenance == KERNEL
    assert d.certificate["fixed_points"] == [0.0] and d.certificate["n_checked"] == 1000
    for N in LADDER:
        eps = rep.get("UC", N).certificate["eps_hat"]["1"]
        for key, v in eps.items():
            assert v == pytest.approx(float(key), abs=1e-10)
        assert rep.get("D", N).certificate["eps_hat"]["1"] == eps


def test_criterion_07_rational_rotation_invariant_small_set():
    s = gallery.get("rotations_rational").system()
    for N in LADDER:
        B = np.arange(4) * (N // 4)
        phi = np.zeros(N)
        phi[0] = N
        t = fixed_set_tail_mass(build_ulam(s, N), phi, B, N)
        assert len(B) / N == pytest.approx(4 / N)
        assert t == pytest.approx(1.0, abs=1e-12)


def test_criterion_08_duality_battery():
    N = 64
    x = (np.arange(N) + 0.5) / N
    pairs = [((x < 0.5).astype(float), (x < 0.5).astype(float)),
             (1.0 + np.cos(2 * np.pi * x), (x < 0.25).astype(float))]
    ids = ["bernoulli_convolution", "expanding_ifs_23", "rotations_rational",
           "deterministic_rational_rotation", "alternating_halves"]
    cases = [(eid, n, 0) for eid in ids for n in (1, 3, 5)] + [(eid, 3, 1) for eid in ids]
    assert len(cases) == 20
    zs = []
    for k, (eid, n, p) in enumerate(cases):
        s = gallery.get(eid).system()
        phi, psi = pairs[p]
        res = duality_check(s, build_ulam(s, N), phi, psi, n, 1_000_000, seed=100 + k)
        zs.append(res.z)
    print("duality z:", " ".join(f"{z:.2f}" for z in zs))
    assert sum(z > 3 for z in zs) <= 1


def test_criterion_09_direct_sum_basin_coverage():
    s = gallery.get("direct_sum").system()
    dec = ergodic_decomposition(build_ulam(s, 64))
    rep = basin_survey(s, dec, 2000, seed=0)
    assert rep.unassigned < 0.01
    assert np.all(np.abs(rep.fractions - 0.5) < 3 * rep.standard_errors)


def test_criterion_10_small_matrix_oracles():
    rng = np.random.default_rng(10)
    for _ in range(200):
        N = int(rng.integers(1, 9))
        Kq = random_rational(rng, N)
        comps, transient, absorb = oracle(Kq)
        dec = ergodic_decomposition(np.array(Kq, dtype=float))
        got = {tuple(int(i) for i in c.support): k for k, c in enumerate(dec.components)}
        assert sorted(got) == sorted(tuple(C) for C, _, _ in comps)
        for C, period, h in comps:
            c = dec.components[got[tuple(C)]]
            assert c.period == period
            assert np.allclose(c.density[C], [float(v) for v in h], atol=1e-9)
        assert sorted(int(i) for i in dec.transient_cells) == transient
        cols = [got[tuple(C)] for C, _, _ in comps]
        for i, row in absorb.items():
            assert np.allclose(dec.absorption_matrix[i][cols], [float(v) for v in row], atol=1e-9)
    for _ in range(500):
        N = int(rng.integers(2, 13))
        v = rng.random(N)
        k = int(rng.integers(1, N + 1))
        brute = max(sum(v[list(A)]) for A in itertools.combinations(range(N), k))
        assert top_sum(v, k) == pytest.approx(brute, abs=1e-12)


def test_criterion_11_determinism_across_threads(tmp_path):
    runs = [
        ["operator", "--gallery", "two_sink_additive", "--grid", "64,128"],
        ["densities", "--gallery", "direct_sum", "--grid", "64,128"],
        ["classify", "--gallery", "bernoulli_convolution"],
        ["classify", "--gallery", "two_sink_additive"],
        ["basins", "--gallery", "direct_sum", "--samples", "400", "--n-avg", "5000", "--seed", "17"],
        ["correlate", "--gallery", "mult_doubling", "--grid", "64"],
    ]
    trees = {}
    for threads in (1, 8):
        root = tmp_path / f"t{threads}"
        for i, argv in enumerate(runs):
            assert main(argv + ["--threads", str(threads), "--out", str(root / str(i))]) == 0
        trees[threads] = {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    assert trees[1].keys() == trees[8].keys()
    assert len(trees[1]) > 20
    for k in trees[1]:
        assert trees[1][k] == trees[8][k], k
