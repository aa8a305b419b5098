"""Numerical probes for the class hierarchy of Markov operators.

Every probe turns a finite object (an Ulam matrix, or exact step-function
iterates for atomic piecewise-affine systems) into a three-valued verdict
backed by named certificates.  A finite stochastic matrix is always mean
constrictive and weakly almost periodic, so verdicts for the asymptotic
classes are only decided at the system level, from trends across the
resolution ladder, and from kernel rules that see null sets a grid cannot.

Hierarchy (arrows are implications)::

    Dstar -> D -> UC -> C -> AC -> MC -> WAP -> S        exact -> mixing
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import rng as _rng
from . import spectral, stepfun
from .errors import MultipleComponents, NotRepresentable, PeriodNotOne
from .system import ATOMIC_KINDS, apply_random
from .ulam import TransferMatrix, build_ulam

FOR, AGAINST, INCONCLUSIVE = "evidence_for", "evidence_against", "inconclusive"
MATRIX, KERNEL, MONTE_CARLO, EXACT = "matrix", "kernel_symbolic", "monte_carlo", "exact_transfer"

CLASSES = ("S", "WAP", "MC", "AC", "C", "UC", "D", "Dstar", "mixing", "exact")
# immediate superclass of each class
PARENT = {"WAP": "S", "MC": "WAP", "AC": "MC", "C": "AC", "UC": "C", "D": "UC", "Dstar": "D", "exact": "mixing"}

TINY = 1e-9


@dataclass
class ClassifyConfig:
    """Thresholds and sizes of the probe suite.

    All values are tuning decisions, not constants of the theory.
    """

    ladder: tuple = (64, 128, 256)
    delta_grid: tuple = (1 / 64, 1 / 32, 1 / 16, 1 / 8, 1 / 4)
    n0_range: tuple = tuple(range(1, 9))
    quadrature: int = 8
    seed: int = 0
    threads: int = 1
    stability: float = 0.10
    small: float = 1e-3
    vanish: float = 0.25
    persist: float = 0.5
    uc_vanish: float = 0.5
    uc_persist: float = 0.9
    collapse_ratio: float = 0.6
    union_ratio: float = 0.9
    cesaro_ratio: float = 0.6
    tail_factor: int = 2
    translates: int = 16
    exact_translates: int = 4
    exact_transfer: bool = True
    exact_budget: int = 1 << 17
    mixing_budget: int = 1 << 21
    mixing_n: int = 30
    dstar_n: int = 64
    fixed_point_samples: int = 1000

    @classmethod
    def from_file(cls, path, **overrides):
        """Load a JSON threshold file; unknown keys raise ``KeyError``."""
        with open(path) as fh:
            data = json.load(fh)
        data.update(overrides)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        bad = set(data) - names
        if bad:
            raise KeyError(f"unknown threshold keys: {sorted(bad)}")
        data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**data)

    def stable(self, prev, top):
        """``top`` no worse than ``prev`` by more than the stability margin."""
        return top <= (1.0 + self.stability) * prev + TINY


@dataclass
class ProbeResult:
    class_tag: str
    verdict: str
    certificate: dict
    resolution: int
    provenance: str
    scope: str = "resolution"
    curves: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {
            "class_tag": self.class_tag,
            "verdict": self.verdict,
            "certificate": _jsonable(self.certificate),
            "resolution": int(self.resolution),
            "provenance": self.provenance,
            "scope": self.scope,
        }


@dataclass
class ClassificationReport:
    system_id: str
    ladder: list
    probes: list
    hierarchy_ok: bool
    conflicts: list = field(default_factory=list)
    missing_resolutions: dict = field(default_factory=dict)

    @property
    def verdicts(self):
        """System-level verdict per class tag."""
        return {p.class_tag: p.verdict for p in self.probes if p.scope == "system"}

    def get(self, class_tag, resolution=None):
        scope = "system" if resolution is None else "resolution"
        for p in self.probes:
            if p.class_tag == class_tag and p.scope == scope and (resolution is None or p.resolution == resolution):
                return p
        raise KeyError((class_tag, resolution))

    def to_dict(self):
        return {
            "system_id": self.system_id,
            "ladder": [int(n) for n in self.ladder],
            "probes": [p.to_dict() for p in self.probes],
            "verdicts": self.verdicts,
            "hierarchy_ok": bool(self.hierarchy_ok),
            "conflicts": list(self.conflicts),
            "missing_resolutions": {str(k): v for k, v in self.missing_resolutions.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir, name="classification"):
        """Write ``<name>.json`` and one ``n,value`` CSV per curve."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(self.to_json())
        written = []
        for p in self.probes:
            for key, curve in sorted(p.curves.items()):
                fname = out / f"{name}_{p.scope}_{p.resolution}_{p.class_tag}_{key}.csv"
                _write_curve(fname, curve)
                written.append(fname.name)
        return written


def _write_curve(path, curve):
    curve = np.asarray(curve, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "value"])
        if curve.ndim == 2:
            for n, v in curve:
                w.writerow([int(n), repr(float(v))])
        else:
            for n, v in enumerate(curve):
                w.writerow([n, repr(float(v))])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _dkey(delta):
    return f"{delta:.6g}"


# ---------------------------------------------------------------------------
# greedy worst sets


def cells_for(delta, N):
    """Number of cells ``floor(delta N)`` (at least one) making up a set of measure delta."""
    return max(1, int(math.floor(delta * N + 1e-9)))


def worst_set(values, k):
    """Indices of the ``k`` largest entries (ties broken by lower index)."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(-values, kind="stable")
    return np.sort(order[:k])


def top_sum(values, k, axis=-1):
    """Sum of the ``k`` largest entries along ``axis``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    if k >= n:
        return values.sum(axis=axis)
    part = np.partition(values, n - k, axis=axis)
    return np.take(part, np.arange(n - k, n), axis=axis).sum(axis=axis)


def top_mass(masses, delta, axis=-1):
    """Largest mass on a set of measure ``delta`` for mass spread uniformly in each cell.

    ``masses`` are cell masses; the optimum takes the ``floor(delta N)``
    heaviest cells and the matching fraction of the next one.
    """
    masses = np.moveaxis(np.asarray(masses, dtype=float), axis, -1)
    N = masses.shape[-1]
    x = delta * N
    k = min(N, int(math.floor(x + 1e-9)))
    frac = 0.0 if k == N else max(0.0, x - k)
    srt = -np.sort(-masses, axis=-1)
    out = srt[..., :k].sum(axis=-1)
    if frac > 1e-12:
        out = out + frac * srt[..., k]
    return out


def _dense(K):
    M = K.matrix if isinstance(K, TransferMatrix) else K
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def _verdict(for_, against):
    if for_ and not against:
        return FOR
    if against and not for_:
        return AGAINST
    return INCONCLUSIVE


# ---------------------------------------------------------------------------
# (S): Straube


def straube_probe(K, delta_grid, n_max, small=1e-3):
    """Largest mass of ``1_X K^n`` on a set of measure delta, over ``n <= n_max``.

    Returns a :class:`ProbeResult` whose certificate maps each delta to
    ``alpha_hat``; the curve ``alpha`` is the running value at the
    smallest delta.
    """
    D = _dense(K)
    N = D.shape[0]
    u = np.ones(N)
    best = np.zeros(len(delta_grid))
    curve = []
    for _ in range(n_max + 1):
        best = np.maximum(best, [top_mass(u / N, d) for d in delta_grid])
        curve.append(best[0])
        u = u @ D
    alpha = {_dkey(d): float(a) for d, a in zip(delta_grid, best)}
    verdict = FOR if np.any(best < 1.0 - small) else AGAINST
    cert = {"alpha_hat": alpha, "n_max": int(n_max)}
    return ProbeResult("S", verdict, cert, N, MATRIX, curves={"alpha": np.array(curve)})


# ---------------------------------------------------------------------------
# (C) and (AC): concentrated densities


def _battery(delta_grid, translates):
    """Concentrated initial densities as ``(width, start)`` pairs in measure units.

    Widths are ``delta, delta/2, delta/4`` and do not depend on the grid,
    so batteries at different resolutions test the same densities.
    """
    out = []
    for d in delta_grid:
        for w in (d, d / 2, d / 4):
            for j in range(translates):
                p = (w, j / translates)
                if p not in out:
                    out.append(p)
    return out


def _on_grid(phis, N):
    """Cell version of a battery: ``(cells, start_cell)`` with at least one cell."""
    out = []
    for w, s in phis:
        p = (max(1, int(round(w * N))), int(math.floor(s * N + 1e-9)))
        if p not in out:
            out.append(p)
    return out


def _fixed_sets(N, delta_grid, h=None, circle=True):
    """Fixed test sets per delta: sliding windows, periodic windows, top cells of ``h``.

    Returns, per delta, a list of ``(label, m, width)`` window families and
    an optional explicit cell set.
    """
    fam = {}
    for d in delta_grid:
        k = cells_for(d, N)
        fams = [(m, k // m) for m in (1, 2, 3, 4) if k // m >= 1]
        top = worst_set(h, k) if h is not None else None
        fam[d] = (fams, top)
    return fam


def _window_masses(G, m, w):
    """Masses of ``W + j/m`` unions for every start cell; ``G`` holds cell masses (P x N)."""
    P, N = G.shape
    ext = np.concatenate([np.zeros((P, 1)), np.cumsum(np.concatenate([G, G], axis=1), axis=1)], axis=1)
    base = ext[:, w:w + N] - ext[:, :N]
    out = base.copy()
    for j in range(1, m):
        out += np.roll(base, -int(round(j * N / m)), axis=1)
    return out


def _evolve_matrix(D, phis, n_end, n_start):
    """Yield ``(n, cell masses)`` of each battery density for tail steps."""
    N = D.shape[0]
    U = np.zeros((len(phis), N))
    for r, (w, s) in enumerate(phis):
        U[r, (s + np.arange(w)) % N] = N / w
    for n in range(n_end + 1):
        if n >= n_start:
            yield n, U / N, None
        if n < n_end:
            U = U @ D


def _evolve_exact(system, phis, n_end, budget):
    """Exact step-function iterates; stops once any iterate exceeds ``budget`` pieces."""
    fs = [stepfun.StepFunction.indicator(_interval(w, s), normalize=True) for w, s in phis]
    orbits = []
    for f in fs:
        orb = [f]
        while len(orb) <= n_end and orb[-1].n_pieces <= budget:
            orb.append(stepfun.push(system, orb[-1]))
        orbits.append(orb)
    reach = min(len(o) for o in orbits) - 1
    return orbits, reach


def _interval(w, s):
    a, b = s, s + w
    if b <= 1.0:
        return [(a, b)]
    return [(a, 1.0), (0.0, b - 1.0)]


def concentration_probe(K, delta_grid, config=None, system=None, h=None):
    """Joint (C) and (AC) evidence from one battery of concentrated densities.

    ``c_hat(delta)`` is the largest top-delta mass of any battery density
    over the tail window; ``t_hat(delta)`` the largest mass on a fixed set
    of measure delta (sliding windows, their periodic unions, the top
    cells of ``h``).  With ``system`` given and exactly transferable, the
    iterates are computed on step functions instead of the matrix.
    """
    cfg = config or ClassifyConfig()
    D = _dense(K)
    N = D.shape[0]
    n_end = cfg.tail_factor * N
    sets = _fixed_sets(N, delta_grid, h)
    ks = [cells_for(d, N) for d in delta_grid]
    c_hat = np.zeros(len(delta_grid))
    t_hat = np.zeros(len(delta_grid))
    c_curve, t_curve = [], []
    it = None
    if system is not None and cfg.exact_transfer and stepfun.supports_exact_transfer(system):
        phis = _battery(delta_grid, cfg.exact_translates)
        try:
            orbits, reach = _evolve_exact(system, phis, n_end, cfg.exact_budget)
        except NotRepresentable:
            orbits = None
        if orbits is not None:
            n_end = reach
            n_start = n_end // 2
            widths = np.array([w for w, _ in phis])

            def steps():
                for n in range(n_start, n_end + 1):
                    fn = [o[n] for o in orbits]
                    G = np.array([f.to_grid(N) for f in fn]) / N
                    C = np.array([[f.top_mass(d) for d in delta_grid] for f in fn])
                    yield n, G, C

            it = steps()
            provenance = EXACT
    if it is None:
        cells = _on_grid(_battery(delta_grid, cfg.translates), N)
        phis = cells
        widths = np.array([w / N for w, _ in cells])
        n_start = n_end // 2
        it = _evolve_matrix(D, cells, n_end, n_start)
        provenance = MATRIX
    for n, G, C in it:
        if C is None:
            C = np.stack([top_mass(G, d) for d in delta_grid], axis=1)
        cn = np.zeros(len(delta_grid))
        tn = np.zeros(len(delta_grid))
        for j, d in enumerate(delta_grid):
            ok = widths <= max(d, ks[j] / N) + TINY
            cn[j] = C[ok, j].max()
            fams, top = sets[d]
            best = max(_window_masses(G, m, w).max() for m, w in fams)
            if top is not None:
                best = max(best, G[:, top].sum(axis=1).max())
            tn[j] = best
        c_hat = np.maximum(c_hat, cn)
        t_hat = np.maximum(t_hat, tn)
        c_curve.append((n, cn[0]))
        t_curve.append((n, tn[0]))
    cert_c = {"c_hat": {_dkey(d): float(v) for d, v in zip(delta_grid, c_hat)},
              "tail": [int(n_start), int(n_end)], "n_densities": len(phis)}
    cert_a = {"t_hat": {_dkey(d): float(v) for d, v in zip(delta_grid, t_hat)},
              "tail": [int(n_start), int(n_end)], "n_densities": len(phis)}
    vc = _verdict(c_hat[0] <= cfg.vanish, c_hat[0] >= cfg.persist)
    va = _verdict(t_hat[0] <= cfg.vanish and t_hat[0] < t_hat[-1] + TINY, t_hat[0] >= cfg.persist)
    rc = ProbeResult("C", vc, cert_c, N, provenance, curves={"c": np.array(c_curve)})
    ra = ProbeResult("AC", va, cert_a, N, provenance, curves={"t": np.array(t_curve)})
    return rc, ra


def constrictivity_probe(K, delta_grid, n_max=None, system=None, config=None):
    """(C) evidence: worst concentrated mass ``c_hat(delta)`` over the tail window."""
    cfg = config or ClassifyConfig()
    if n_max is not None:
        cfg = replace(cfg, tail_factor=max(1, n_max // _dense(K).shape[0]))
    return concentration_probe(K, delta_grid, cfg, system)[0]


def ac_probe(K, delta_grid, n_tail=None, system=None, h=None, config=None):
    """(AC) evidence: worst fixed-set tail mass ``t_hat(delta)``."""
    cfg = config or ClassifyConfig()
    if n_tail is not None:
        cfg = replace(cfg, tail_factor=max(1, (2 * n_tail) // _dense(K).shape[0]))
    return concentration_probe(K, delta_grid, cfg, system, h)[1]


def fixed_set_tail_mass(K, phi, cells, n_tail):
    """``max`` over ``n in [n_tail, 2 n_tail]`` of the mass of ``phi K^n`` on ``cells``."""
    D = _dense(K)
    N = D.shape[0]
    u = np.asarray(phi, dtype=float)
    cells = np.asarray(cells, dtype=int)
    best = -np.inf
    for n in range(2 * n_tail + 1):
        if n >= n_tail:
            best = max(best, u[cells].sum() / N)
        u = u @ D
    return float(best)


# ---------------------------------------------------------------------------
# (MC): Cesaro convergence


def mc_probe(K, decomposition, n_grid, ratio=0.6, small=1e-3):
    """Cesaro curve ``d_n = max_i ||A_n e_i - sum_k lambda_k(e_i) h_k||_1``.

    ``e_i = N 1_{cell i}``.  The resolution-level verdict records whether
    ``d_n`` follows a decaying ``1/n`` envelope (last value at most
    ``ratio`` times the previous grid value, or below ``small``); any
    finite matrix passes eventually, so this is reported as inconclusive
    and only the certificate feeds the system-level rule.
    """
    D = _dense(K)
    N = D.shape[0]
    H = np.array([c.density for c in decomposition.components]).reshape(-1, N)
    target = decomposition.absorption_matrix @ H  # row i: limit of A_n e_i
    n_grid = sorted(int(n) for n in n_grid)
    S = np.zeros_like(D)
    P = np.eye(N)
    d = []
    n = 0
    for m in n_grid:
        while n < m:
            S += P
            P = P @ D
            n += 1
        d.append(float(np.max(np.mean(np.abs(N * S / n - target), axis=1))))
    decays = d[-1] < small or (len(d) > 1 and d[-1] <= ratio * d[-2] + TINY)
    cert = {"d_n": {str(m): v for m, v in zip(n_grid, d)}, "envelope_decay": bool(decays),
            "rule": "finite matrices are always mean constrictive"}
    return ProbeResult("MC", INCONCLUSIVE, cert, N, MATRIX, curves={"d": np.array(list(zip(n_grid, d)))})


def wap_probe(K, decomposition, support=None):
    """Adjoint absorption of ``1_S`` for ``S`` the union of component supports."""
    a, ok = spectral.maximal_support_check(K, decomposition, support=support)
    N = decomposition.N
    cert = {"a_final": float(a[-1]), "absorbed": bool(ok), "n_max": len(a) - 1,
            "rule": "maximal support of an invariant density"}
    return ProbeResult("WAP", INCONCLUSIVE, cert, N, MATRIX, curves={"a": a})


# ---------------------------------------------------------------------------
# (UC), (D): uniform smallness of transition mass


def _row_smallness(K, n0_range, delta_grid):
    D = _dense(K)
    N = D.shape[0]
    eps = np.zeros((len(n0_range), len(delta_grid)))
    P = np.eye(N)
    n = 0
    for a, n0 in enumerate(sorted(n0_range)):
        while n < n0:
            P = P @ D
            n += 1
        for b, d in enumerate(delta_grid):
            eps[a, b] = top_mass(P, d).max()
    return eps


def _uc_certificate(eps, n0_range, delta_grid):
    n0s = sorted(n0_range)
    best = int(np.argmin(eps[:, 0]))
    return {
        "eps_hat": {str(n0): {_dkey(d): float(v) for d, v in zip(delta_grid, row)} for n0, row in zip(n0s, eps)},
        "best_n0": n0s[best],
        "eps_star": float(eps[best, 0]),
        "delta": float(delta_grid[0]),
    }


def uc_probe(K, system, n0_range, delta_grid, config=None):
    """(UC) evidence: ``eps_hat(n0, delta) = max_i`` top-delta mass of row i of ``K^n0``.

    The kernel rule dominates: an atomic transition kernel (IFS or
    deterministic) defeats every absolutely continuous reference measure.
    """
    cfg = config or ClassifyConfig()
    eps = _row_smallness(K, n0_range, delta_grid)
    N = _dense(K).shape[0]
    cert = _uc_certificate(eps, n0_range, delta_grid)
    if system is not None and system.declared_atomic:
        cert["rule"] = "atomic kernel"
        return ProbeResult("UC", AGAINST, cert, N, KERNEL)
    e = cert["eps_star"]
    return ProbeResult("UC", _verdict(e <= cfg.uc_vanish, e >= cfg.uc_persist), cert, N, MATRIX)


def common_fixed_points(system, n_samples=1000, seed=0):
    """Declared fixed points ``x*`` with ``f_t(x*) == x*`` for every sampled ``t``."""
    ts = _rng.uniforms(seed, 0xF1F0, 0, n_samples)
    out = []
    for x in system.declared_fixed_points:
        y = apply_random(system, ts, np.full(n_samples, float(x)))
        if np.all(y == x):
            out.append(float(x))
    return out


def doeblin_probe(K, system, n0_range, delta_grid, config=None):
    """(D) evidence: the (UC) matrix certificate plus the common-fixed-point rule."""
    cfg = config or ClassifyConfig()
    uc = uc_probe(K, system, n0_range, delta_grid, cfg)
    cert = dict(uc.certificate)
    if system is not None:
        fps = common_fixed_points(system, cfg.fixed_point_samples, cfg.seed)
        if fps:
            cert.update(rule="common fixed point", fixed_points=fps, n_checked=cfg.fixed_point_samples)
            return ProbeResult("D", AGAINST, cert, uc.resolution, KERNEL)
    return ProbeResult("D", uc.verdict, cert, uc.resolution, uc.provenance)


# ---------------------------------------------------------------------------
# (D*): uniform ergodicity


def dstar_curve(K, n_max, pi=None):
    """``s_n = max_i sum_j |K^n_ij - pi_j / N|`` for ``n = 0..n_max`` (TV, factor-2 convention)."""
    D = _dense(K)
    N = D.shape[0]
    if pi is None:
        dec = spectral.ergodic_decomposition(K)
        if dec.r != 1:
            raise MultipleComponents(f"{dec.r} ergodic components")
        pi = dec.components[0].density
    target = np.asarray(pi) / N
    P = np.eye(N)
    s = []
    for n in range(n_max + 1):
        s.append(float(np.max(np.abs(P - target[None, :]).sum(axis=1))))
        if n < n_max:
            P = P @ D
    return np.array(s)


def dstar_probe(K, n_max, decomposition=None, small=1e-3, persist=0.5):
    """(D*) evidence from the TV curve and its geometric fit.

    Raises
    ------
    MultipleComponents
        When the matrix has more than one ergodic component.
    """
    from .montecarlo import fit_exponential

    dec = decomposition or spectral.ergodic_decomposition(K)
    if dec.r != 1:
        raise MultipleComponents(f"{dec.r} ergodic components")
    s = dstar_curve(K, n_max, dec.components[0].density)
    C, lam, _ = fit_exponential(s[1:], floor=1e-15)
    cert = {"s_final": float(s[-1]), "n_max": int(n_max), "C": C, "lambda": lam,
            "period": int(dec.components[0].period)}
    v = _verdict(s[-1] < small and lam < 1.0, s[-1] >= persist)
    return ProbeResult("Dstar", v, cert, dec.N, MATRIX, curves={"s": s})


# ---------------------------------------------------------------------------
# mixing and exactness


def _step_battery(N):
    x = (np.arange(N) + 0.5) / N
    return [np.where(x < 0.5, 1.0, -1.0), np.sign(np.cos(2 * np.pi * x)), np.sign(np.sin(2 * np.pi * x))]


def mixing_battery(h):
    """Mean-zero densities ``h s - <s, h> h`` supported in ``supp h``."""
    h = np.asarray(h, dtype=float)
    out = []
    for s in _step_battery(len(h)):
        phi = h * s - np.mean(h * s) * h
        if np.mean(np.abs(phi)) > 1e-12:
            out.append(phi)
    return out


def mixing_exactness_probe(K, component, n_max, system=None, config=None):
    """Weak-pairing and strong-norm decay of mean-zero densities in ``supp h``.

    Returns ``(mixing, exact)`` results.  Raises :class:`PeriodNotOne` for a
    periodic component.
    """
    cfg = config or ClassifyConfig()
    N = len(component.density)
    if component.period != 1:
        raise PeriodNotOne(f"component has period {component.period}")
    phis = mixing_battery(component.density)
    psis = _step_battery(N)
    exact = (system is not None and cfg.exact_transfer and stepfun.supports_exact_transfer(system)
             and _uniform_on_support(component.density))
    if not phis:
        zero = np.zeros(n_max + 1)
        cert = {"strong_final": 0.0, "weak_final": 0.0, "n_max": n_max}
        return (ProbeResult("mixing", FOR, dict(cert), N, MATRIX, curves={"weak": zero}),
                ProbeResult("exact", FOR, dict(cert), N, MATRIX, curves={"strong": zero}))
    if exact:
        try:
            strong, weak = _exact_curves(system, phis, psis, n_max, cfg.mixing_budget, cfg.exact_budget)
            prov = EXACT
        except NotRepresentable:
            exact = False
    if not exact:
        D = _dense(K)
        strong = np.zeros((len(phis), n_max + 1))
        weak = np.zeros((len(phis), n_max + 1))
        U = np.array(phis)
        norms = np.mean(np.abs(U), axis=1)
        Psi = np.array(psis)
        for n in range(n_max + 1):
            strong[:, n] = np.mean(np.abs(U), axis=1) / norms
            weak[:, n] = np.max(np.abs(U @ Psi.T) / N, axis=1) / norms
            U = U @ D
        prov = MATRIX
    s_curve = _colmax(strong)
    w_curve = _colmax(weak)
    s_last = _last_finite(s_curve)
    w_last = _last_finite(w_curve)
    cert_m = {"weak_final": w_last, "n_max": int(n_max), "n_densities": len(phis)}
    cert_e = {"strong_final": s_last, "n_reached": int(np.sum(np.isfinite(s_curve)) - 1), "n_densities": len(phis)}
    vm = _verdict(w_last < cfg.small, w_last >= cfg.persist)
    ve = _verdict(s_last < cfg.small, s_last >= cfg.persist)
    return (ProbeResult("mixing", vm, cert_m, N, prov, curves={"weak": w_curve}),
            ProbeResult("exact", ve, cert_e, N, prov, curves={"strong": s_curve[np.isfinite(s_curve)]}))


def _colmax(a):
    """Column maxima over finite entries; NaN where a column has none."""
    fin = np.isfinite(a)
    out = np.where(fin, a, -np.inf).max(axis=0)
    return np.where(fin.any(axis=0), out, np.nan)


def _last_finite(c):
    c = c[np.isfinite(c)]
    return float(c[-1]) if len(c) else float("nan")


def _uniform_on_support(h):
    pos = h[h > 0]
    return len(pos) == len(h) and np.ptp(pos) <= 1e-9 * pos.max()


def _exact_curves(system, phis, psis, n_max, budget, pull_budget):
    """Strong curve by pushing ``phi``; weak curve by pulling each ``psi`` (adjoint)."""
    strong = np.full((len(phis), n_max + 1), np.nan)
    weak = np.full((len(phis), n_max + 1), np.nan)
    fs0 = [stepfun.StepFunction.from_grid(p) for p in phis]
    norms = [f.l1_norm() for f in fs0]
    for a, f in enumerate(fs0):
        n = 0
        while True:
            strong[a, n] = f.l1_norm() / norms[a]
            if n == n_max or f.n_pieces > budget:
                break
            f = stepfun.push(system, f)
            n += 1
    gs = [stepfun.StepFunction.from_grid(p) for p in psis]
    for n in range(n_max + 1):
        for a, phi in enumerate(phis):
            weak[a, n] = max(abs(g.pair_grid(phi)) for g in gs) / norms[a]
        if n == n_max or any(g.n_pieces > pull_budget for g in gs):
            break
        gs = [stepfun.pull(system, g) for g in gs]
    return strong, weak


# ---------------------------------------------------------------------------
# one resolution


@dataclass
class _Level:
    N: int
    K: object
    decomposition: object
    probes: dict


def _run_resolution(system, N, cfg):
    tm = build_ulam(system, N, quadrature=cfg.quadrature)
    K = tm.matrix
    dec = spectral.ergodic_decomposition(K)
    dg = tuple(cfg.delta_grid)
    h = dec.components[0].density if dec.r == 1 else None
    out = {}
    out["S"] = straube_probe(K, dg, cfg.tail_factor * N, cfg.small)
    out["WAP"] = wap_probe(K, dec)
    out["MC"] = mc_probe(K, dec, (N // 2, N, 2 * N), cfg.cesaro_ratio, cfg.small)
    out["C"], out["AC"] = concentration_probe(K, dg, cfg, system, h)
    out["UC"] = uc_probe(K, system, cfg.n0_range, dg, cfg)
    out["D"] = doeblin_probe(K, system, cfg.n0_range, dg, cfg)
    if dec.r != 1:
        out["Dstar"] = ProbeResult("Dstar", AGAINST, {"rule": "more than one invariant density", "r": dec.r},
                                   N, MATRIX)
    else:
        out["Dstar"] = dstar_probe(K, cfg.dstar_n, dec, cfg.small, cfg.persist)
    if out["Dstar"].verdict == FOR and out["D"].verdict != FOR:
        # a TV certificate without Doeblin smallness only reflects the grid
        out["Dstar"].verdict = INCONCLUSIVE
        out["Dstar"].certificate["rule"] = "requires (D) evidence at the same resolution"
    if out["D"].provenance == KERNEL and out["D"].verdict == AGAINST:
        # null-set obstructions seen by the kernel rules bind the subclass too
        cert = dict(out["Dstar"].certificate, rule=out["D"].certificate["rule"])
        out["Dstar"] = ProbeResult("Dstar", AGAINST, cert, N, KERNEL, curves=out["Dstar"].curves)
    mix, ex = [], []
    for k, comp in enumerate(dec.components):
        if comp.period != 1:
            cert = {"rule": "periodic component", "period": int(comp.period), "component": k}
            mix.append(ProbeResult("mixing", AGAINST, cert, N, MATRIX))
            ex.append(ProbeResult("exact", AGAINST, dict(cert), N, MATRIX))
            continue
        m, e = mixing_exactness_probe(K, comp, cfg.mixing_n, system, cfg)
        m.certificate["component"] = e.certificate["component"] = k
        mix.append(m)
        ex.append(e)
    out["mixing"] = _combine(mix)
    out["exact"] = _combine(ex)
    for p in out.values():
        p.certificate.setdefault("build_method", tm.build_method)
    return _Level(N, K, dec, out)


def _combine(results):
    """All components must agree on 'for'; any 'against' wins."""
    if any(r.verdict == AGAINST for r in results):
        return next(r for r in results if r.verdict == AGAINST)
    if all(r.verdict == FOR for r in results):
        return results[0]
    return next(r for r in results if r.verdict == INCONCLUSIVE)


# ---------------------------------------------------------------------------
# across resolutions


def _support_measure(comp, N):
    return len(comp.support) / N


def _overlap(fine, Nf, coarse, Nc):
    return bool(np.intersect1d((np.asarray(fine) * Nc) // Nf, coarse).size)


def collapsing_components(prev, top, ratio=0.6):
    """Components at the finer level whose measure shrinks against the overlapping coarse one.

    Returns ``(indices, union_ratio)`` where ``union_ratio`` compares the
    measure of the collapsing union with the coarse components it overlaps.
    """
    Nc, Nf = prev.decomposition.N, top.decomposition.N
    idx = []
    coarse_hit = set()
    for k, c in enumerate(top.decomposition.components):
        best, hit = 0.0, []
        for j, cc in enumerate(prev.decomposition.components):
            if _overlap(c.support, Nf, cc.support, Nc):
                hit.append(j)
                best = max(best, _support_measure(cc, Nc))
        if hit and _support_measure(c, Nf) <= ratio * best:
            idx.append(k)
            coarse_hit.update(hit)
    if not idx:
        return [], 1.0
    m_top = sum(_support_measure(top.decomposition.components[k], Nf) for k in idx)
    m_prev = sum(_support_measure(prev.decomposition.components[j], Nc) for j in coarse_hit)
    return idx, m_top / m_prev


def _sys(tag, verdict, cert, N, provenance=MATRIX):
    return ProbeResult(tag, verdict, cert, N, provenance, scope="system")


def _aggregate(levels, system, cfg):
    """System-level verdicts from the top two resolutions and kernel rules."""
    top = levels[-1]
    prev = levels[-2] if len(levels) > 1 else levels[-1]
    Nt = top.N
    P, Q = prev.probes, top.probes
    d0 = _dkey(cfg.delta_grid[0])
    res = {}

    # (S): some delta keeps alpha below one at every level and stably
    ok_for = [
        all(lv.probes["S"].certificate["alpha_hat"][_dkey(d)] < 1 - cfg.small for lv in levels)
        and cfg.stable(P["S"].certificate["alpha_hat"][_dkey(d)], Q["S"].certificate["alpha_hat"][_dkey(d)])
        for d in cfg.delta_grid
    ]
    against = all(v >= 1 - cfg.small for v in Q["S"].certificate["alpha_hat"].values())
    res["S"] = _sys("S", _verdict(any(ok_for), against),
                    {"alpha_hat": Q["S"].certificate["alpha_hat"], "stable_deltas":
                     [float(d) for d, o in zip(cfg.delta_grid, ok_for) if o]}, Nt)

    # (WAP): maximal support of the non-collapsing part
    coll, uratio = collapsing_components(prev, top, cfg.collapse_ratio) if len(levels) > 1 else ([], 1.0)
    comps = top.decomposition.components
    keep = [k for k in range(len(comps)) if k not in coll]
    m_coll = sum(_support_measure(comps[k], Nt) for k in coll)
    admissible = bool(coll) and uratio >= cfg.union_ratio and m_coll >= cfg.delta_grid[0]
    S_cells = [comps[k].support for k in keep] + ([comps[k].support for k in coll] if admissible else [])
    support = np.concatenate(S_cells) if S_cells else np.zeros(0, dtype=int)
    if len(support):
        a, absorbed = spectral.maximal_support_check(top.K, top.decomposition, support=support)
    else:
        a, absorbed = np.zeros(1), False
    cert = {"collapsing": [int(k) for k in coll], "collapsing_union_ratio": float(uratio),
            "collapsing_union_admissible": admissible, "a_final": float(a[-1]), "absorbed": bool(absorbed),
            "rule": "maximal support of an invariant density"}
    res["WAP"] = _sys("WAP", FOR if absorbed else AGAINST, cert, Nt)
    res["WAP"].curves["a"] = a

    # (MC): Cesaro envelope at the top two levels, no collapsing components
    decays = all(lv.probes["MC"].certificate["envelope_decay"] for lv in (prev, top))
    mc_against = bool(coll) or not absorbed
    cert = {"d_n": Q["MC"].certificate["d_n"], "envelope_decay": decays, "collapsing": [int(k) for k in coll]}
    res["MC"] = _sys("MC", _verdict(absorbed and not coll and decays, mc_against), cert, Nt)

    # (C), (AC): smallest delta, top two levels
    for tag, key in (("C", "c_hat"), ("AC", "t_hat")):
        vp, vt = P[tag].certificate[key][d0], Q[tag].certificate[key][d0]
        v = _verdict(vt <= cfg.vanish and cfg.stable(vp, vt), vt >= cfg.persist and vp >= cfg.persist)
        res[tag] = _sys(tag, v, {key: Q[tag].certificate[key], "previous": vp, "delta": cfg.delta_grid[0]},
                        Nt, Q[tag].provenance)

    # (UC), (D): kernel rules first, then the matrix certificate
    for tag in ("UC", "D"):
        q, p = Q[tag], P[tag]
        if q.provenance == KERNEL:
            res[tag] = _sys(tag, q.verdict, dict(q.certificate), Nt, KERNEL)
            continue
        ep, et = p.certificate["eps_star"], q.certificate["eps_star"]
        v = _verdict(et <= cfg.uc_vanish and cfg.stable(ep, et), et >= cfg.uc_persist and ep >= cfg.uc_persist)
        res[tag] = _sys(tag, v, dict(q.certificate, previous=ep), Nt)

    # (D*), mixing, exact: agreement of the top two levels
    for tag in ("Dstar", "mixing", "exact"):
        q, p = Q[tag], P[tag]
        if q.verdict == p.verdict:
            v = q.verdict
        elif AGAINST in (q.verdict, p.verdict) and tag != "Dstar":
            v = INCONCLUSIVE
        else:
            v = AGAINST if q.verdict == AGAINST else INCONCLUSIVE
        res[tag] = _sys(tag, v, dict(q.certificate), Nt, q.provenance)
    if res["S"].verdict == AGAINST:
        for tag in ("mixing", "exact"):
            res[tag].verdict = INCONCLUSIVE
            res[tag].certificate["rule"] = "no invariant density"
    return res


def propagate(verdicts):
    """Close verdicts under the hierarchy.

    'for' flows to superclasses and 'against' to subclasses.  Returns the
    closed map and the list of classes that received both.
    """
    out = dict(verdicts)
    conflicts = []
    children = {}
    for c, p in PARENT.items():
        children.setdefault(p, []).append(c)

    def up(c):
        while c in PARENT:
            c = PARENT[c]
            yield c

    def down(c):
        stack = list(children.get(c, []))
        while stack:
            d = stack.pop()
            yield d
            stack.extend(children.get(d, []))

    derived_for = {c for c, v in verdicts.items() if v == FOR}
    derived_against = {c for c, v in verdicts.items() if v == AGAINST}
    for c in list(derived_for):
        derived_for.update(up(c))
    for c in list(derived_against):
        derived_against.update(down(c))
    for c in CLASSES:
        if c in derived_for and c in derived_against:
            conflicts.append(c)
        elif c in derived_for:
            out[c] = FOR
        elif c in derived_against:
            out[c] = AGAINST
    return out, sorted(conflicts, key=CLASSES.index)


def _apply_propagation(results, scope_label):
    raw = {t: r.verdict for t, r in results.items()}
    closed, conflicts = propagate(raw)
    for t, v in closed.items():
        if v != raw.get(t):
            results[t].certificate["raw_verdict"] = raw[t]
            results[t].certificate["rule_propagated"] = "hierarchy"
            results[t].verdict = v
    return [f"{scope_label}:{c}" for c in conflicts]


# ---------------------------------------------------------------------------
# driver


def classify(system, config=None):
    """Run every probe over the resolution ladder and aggregate.

    Parameters
    ----------
    system : RandomSystem
    config : ClassifyConfig, optional

    Returns
    -------
    ClassificationReport
    """
    cfg = config or ClassifyConfig()
    ladder = sorted(int(n) for n in cfg.ladder)
    missing = {}

    def run(N):
        try:
            return _run_resolution(system, N, cfg)
        except Exception as exc:  # report the resolution as missing
            missing[N] = f"{type(exc).__name__}: {exc}"
            return None

    if cfg.threads and cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            levels = list(pool.map(run, ladder))
    else:
        levels = [run(N) for N in ladder]
    levels = [lv for lv in levels if lv is not None]
    probes, conflicts = [], []
    for lv in levels:
        conflicts += _apply_propagation(lv.probes, f"N={lv.N}")
        probes += [lv.probes[t] for t in sorted(lv.probes)]
    if levels:
        agg = _aggregate(levels, system, cfg)
        conflicts += _apply_propagation(agg, "system")
        probes += [agg[t] for t in sorted(agg)]
    probes.sort(key=lambda p: (p.scope != "resolution", p.resolution, p.class_tag))
    return ClassificationReport(system.system_id, ladder, probes, not conflicts and bool(levels),
                                conflicts, missing)
