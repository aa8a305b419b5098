"""Random orbits, Birkhoff histograms, statistical basins and correlations.

Randomness is addressed by ``(seed, stream, counter)``.  Work is split into
fixed batches of samples, each with its own stream, so results do not depend
on how batches are spread over threads.

Orbits of expanding atomic systems are simulated in *lazy precision*: the
state is a short interval ``[lo, lo + w)`` carrying the uniform law, refined
by fresh random digits whenever the dynamics blows it up.  Plain doubles
would lose one bit per doubling and collapse onto a dyadic fixed point in
about 53 steps.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import SupportViolation
from . import _kernels as _k
from .system import ATOMIC_KINDS
from .ulam import apply, inner

ORBIT, BASIN, DUALITY, SURROGATE = 1, 2, 3, 4
N_BATCHES = 100
CHUNK = 1024
W_START = 2.0 ** -40


def _stream(purpose, batch):
    return (purpose << 32) | batch


def _draws(seed, purpose, batch, chunk, shape):
    g = _rng.generator(seed, _stream(purpose, batch), counter=chunk << 40)
    return g.random(shape)


def _run_batches(fn, n_batches, threads):
    if threads is None or threads <= 1 or n_batches <= 1:
        return [fn(b) for b in range(n_batches)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_batches)))


# ---------------------------------------------------------------------------
# stepping


def _init_state(x0):
    x0 = np.asarray(x0, dtype=float)
    lo = np.minimum(x0, 1.0 - W_START)
    return lo.copy(), np.full(x0.shape, W_START)


def _simulate(system, x0, seed, purpose, batch, n_steps, generic, visit):
    """Run one batch of orbits.

    ``visit(j0, xs)`` receives consecutive positions ``x_{j0}, x_{j0+1}, ...``
    stacked along the first axis, one call per chunk.
    """
    generic = generic and system.kind in ATOMIC_KINDS
    tab = _k.StepTables(system)
    args = tab.args()
    if generic:
        lo, w = _init_state(x0)
        x = lo
    else:
        x = np.array(x0, dtype=float)
    visit(0, x[None, :].copy())
    n_chunks = -(-n_steps // CHUNK)
    j = 0
    for chunk in range(n_chunks):
        m = min(CHUNK, n_steps - j)
        draws = _draws(seed, purpose, batch, chunk, (m, x.size, 4))
        buf = np.empty((m, x.size))
        if generic:
            _k.run_generic(lo, w, draws, buf, *args[1:7])
        else:
            _k.run_float(x, draws, buf, *args)
        visit(j + 1, buf)
        j += m
    return lo if generic else x


# ---------------------------------------------------------------------------
# orbits and histograms


def random_orbit(system, x0, seed, n, generic=False):
    """Trajectory ``x_0, ..., x_n`` with ``x_{j+1} = f_{t_j}(x_j)``.

    Parameters
    ----------
    generic : bool
        Use lazy-precision interval states (atomic systems only).  Off by
        default so fixed points and exact float orbits are kept.
    """
    out = np.empty(n + 1)

    def visit(j, xs):
        out[j:j + len(xs)] = xs[:, 0]

    _simulate(system, np.array([float(x0)]), seed, ORBIT, 0, n, generic, visit)
    return out


@dataclass(frozen=True)
class EmpiricalMeasure:
    masses: np.ndarray
    n_burn: int
    n_avg: int
    seed: int


def _bins(x, N):
    return np.minimum((x * N).astype(np.int64), N - 1)


def _histograms(system, x0, seed, purpose, batch, n_burn, n_avg, N, generic):
    S = len(x0)
    counts = np.zeros(S * N, dtype=np.int64)
    offs = np.arange(S) * N

    def visit(j, xs):
        skip = max(0, n_burn - j)
        if skip < len(xs):
            flat = offs[None, :] + _bins(xs[skip:], N)
            counts[:] += np.bincount(flat.ravel(), minlength=S * N)

    _simulate(system, x0, seed, purpose, batch, n_burn + n_avg - 1, generic, visit)
    return counts.reshape(S, N) / n_avg


def birkhoff_histogram(system, x0, seed, n_burn, n_avg, N, generic=False):
    """Histogram of orbit points ``j in [n_burn, n_burn + n_avg)`` over ``N`` cells."""
    if n_avg < 1:
        raise ValueError("n_avg must be >= 1")
    h = _histograms(system, np.array([float(x0)]), seed, ORBIT, 0, n_burn, n_avg, N, generic)[0]
    return EmpiricalMeasure(h, n_burn, n_avg, seed)


# ---------------------------------------------------------------------------
# basins


@dataclass(frozen=True)
class BasinReport:
    fractions: np.ndarray
    unassigned: float
    n_samples: int
    threshold: float
    standard_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    unassigned_se: float = 0.0

    def to_dict(self):
        return {
            "fractions": [float(v) for v in self.fractions],
            "standard_errors": [float(v) for v in self.standard_errors],
            "unassigned": float(self.unassigned),
            "unassigned_se": float(self.unassigned_se),
            "n_samples": int(self.n_samples),
            "threshold": float(self.threshold),
        }


def _batch_sizes(n, n_batches=N_BATCHES):
    base, extra = divmod(n, n_batches)
    return [base + (1 if b < extra else 0) for b in range(n_batches)]


def assign(masses, decomposition, threshold):
    """Nearest component in L1 histogram distance, or -1 when none is within ``threshold``."""
    N = decomposition.N
    H = np.array([c.density / N for c in decomposition.components]).reshape(-1, N)
    d = np.abs(masses[:, None, :] - H[None, :, :]).sum(axis=2)
    k = np.argmin(d, axis=1) if H.shape[0] else np.full(len(masses), -1)
    best = d[np.arange(len(masses)), k] if H.shape[0] else np.full(len(masses), np.inf)
    return np.where(best < threshold, k, -1), best


def basin_survey(system, decomposition, n_samples, n_burn=1000, n_avg=100_000, threshold=0.2,
                 seed=0, threads=1, generic=True):
    """Fractions of uniformly drawn ``(x, omega)`` assigned to each component.

    Samples are grouped in 100 batches; the standard errors are batch means.
    """
    r = decomposition.r
    if n_samples == 0:
        return BasinReport(np.zeros(r), 0.0, 0, threshold, np.zeros(r), 0.0)
    sizes = _batch_sizes(n_samples)
    N = decomposition.N

    def run(b):
        if sizes[b] == 0:
            return np.zeros(0, dtype=int)
        x0 = _rng.generator(seed, _stream(BASIN, b), counter=(1 << 60)).random(sizes[b])
        masses = _histograms(system, x0, seed, BASIN, b, n_burn, n_avg, N, generic)
        return assign(masses, decomposition, threshold)[0]

    labels = _run_batches(run, len(sizes), threads)
    allk = np.concatenate(labels)
    fr = np.array([np.mean(allk == k) for k in range(r)])
    un = float(np.mean(allk == -1))
    used = [lab for lab in labels if len(lab)]
    nb = len(used)
    se = np.zeros(r)
    un_se = 0.0
    if nb > 1:
        per = np.array([[np.mean(lab == k) for k in range(-1, r)] for lab in used])
        s = per.std(axis=0, ddof=1) / math.sqrt(nb)
        un_se, se = float(s[0]), s[1:]
    return BasinReport(fr, un, n_samples, threshold, se, un_se)


def nonfiberwise_surrogate(system, decomposition, n_points, n_streams=4, n_burn=1000, n_avg=20_000,
                           threshold=0.2, seed=0, generic=True):
    """Fraction of points whose basin assignment differs between noise streams.

    A crude stand-in for the complement of the non-fiberwise basins G(mu):
    a point belongs to some G(mu) only if every noise realisation sends it
    to the same measure.
    """
    x0 = _rng.generator(seed, _stream(SURROGATE, 0), counter=(1 << 60)).random(n_points)
    labs = []
    for s in range(n_streams):
        masses = _histograms(system, x0, seed, SURROGATE, 1 + s, n_burn, n_avg, decomposition.N, generic)
        labs.append(assign(masses, decomposition, threshold)[0])
    labs = np.array(labs)
    varies = np.any(labs != labs[0], axis=0) | np.any(labs == -1, axis=0)
    return float(np.mean(varies))


# ---------------------------------------------------------------------------
# correlations and duality


@dataclass(frozen=True)
class CorrelationFit:
    values: np.ndarray
    C: float
    rho: float
    r2: float


def fit_exponential(values, floor=1e-14):
    """Fit ``|C_n| <= C rho^n`` on ``log|C_n|`` over entries above ``floor``."""
    values = np.asarray(values, dtype=float)
    n = np.arange(len(values))
    ok = np.abs(values) > floor
    if ok.sum() == 0:
        return 0.0, 0.0, 1.0
    if ok.sum() == 1:
        return float(np.abs(values[ok][0])), 0.0, 1.0
    y = np.log(np.abs(values[ok]))
    slope, icpt = np.polyfit(n[ok], y, 1)
    pred = slope * n[ok] + icpt
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    rho = float(np.clip(math.exp(slope), 0.0, 1.0))
    # envelope: smallest C with |C_n| <= C rho^n on the fitted points
    C = float(np.max(np.abs(values[ok]) / np.maximum(rho, 1e-300) ** n[ok])) if rho > 0 else float(np.max(np.abs(values)))
    return C, rho, r2


def annealed_correlation(K, h, phi, psi, n_max):
    """``C_n = <psi, (phi h) K^n> - <psi, h><phi, h>`` for ``n = 0..n_max``."""
    h = np.asarray(h, dtype=float)
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if np.any((phi != 0) & (h <= 0)):
        raise SupportViolation("phi is not supported in supp h")
    base = inner(psi, h) * inner(phi, h)
    u = phi * h
    vals = []
    for _ in range(n_max + 1):
        vals.append(inner(psi, u) - base)
        u = apply(K, u)
    vals = np.array(vals)
    C, rho, r2 = fit_exponential(vals)
    return CorrelationFit(vals, C, rho, r2)


@dataclass(frozen=True)
class DualityResult:
    mc_estimate: float
    se: float
    matrix_value: float
    z: float


def duality_check(system, K, phi, psi, n, n_samples, seed=0, threads=1):
    """Compare ``E[psi(x_n) phi(x_0)]`` over uniform ``x_0`` with ``<psi, phi K^n>``."""
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    N = len(phi)
    u = phi.copy()
    for _ in range(n):
        u = apply(K, u)
    matrix_value = inner(psi, u)
    sizes = _batch_sizes(n_samples)

    def run(b):
        if sizes[b] == 0:
            return 0.0
        x0 = _rng.generator(seed, _stream(DUALITY, b), counter=(1 << 60)).random(sizes[b])
        w0 = phi[_bins(x0, N)]
        last = {}

        def visit(j, xs):
            if j <= n < j + len(xs):
                last["x"] = xs[n - j].copy()

        _simulate(system, x0, seed, DUALITY, b, n, False, visit)
        return float(np.mean(psi[_bins(last["x"], N)] * w0))

    means = np.array(_run_batches(run, len(sizes), threads))
    wts = np.array(sizes, dtype=float)
    ok = wts > 0
    est = float(np.dot(means[ok], wts[ok]) / wts[ok].sum())
    nb = int(ok.sum())
    se = float(means[ok].std(ddof=1) / math.sqrt(nb)) if nb > 1 else 0.0
    diff = abs(est - matrix_value)
    z = diff / se if se > 0 else (0.0 if diff < 1e-12 else math.inf)
    return DualityResult(est, se, matrix_value, z)
