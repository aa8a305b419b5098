"""Random dynamical systems on [0, 1]: maps, noise laws and random maps.

A random map is a family ``f_t`` indexed by a noise value ``t`` in [0, 1].
All maps are piecewise affine, which keeps preimages exact for the Ulam
builder and the step-function transfer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import (
    DomainEscape,
    NoiseNormalizationError,
    SpecError,
    WeightSumError,
)
from . import rng as _rng

INTERVAL = "interval"
CIRCLE = "circle"

KINDS = ("ifs", "additive", "multiplicative", "blend", "deterministic")
ATOMIC_KINDS = ("ifs", "deterministic")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PiecewiseAffineMap:
    """Piecewise affine map of [0, 1].

    Piece ``k`` covers ``[breakpoints[k], breakpoints[k+1])`` (the last piece
    also owns x = 1) and evaluates ``slopes[k] * x + intercepts[k]``, reduced
    mod 1 when ``wrap`` is set.  ``point_values`` overrides the value at
    isolated points; these are Lebesgue-null and invisible to every
    discretisation, but are honoured by pointwise evaluation.
    """

    breakpoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    wrap: bool = False
    point_values: tuple = ()
    exact: bool = True

    def __post_init__(self):
        b = _frozen(self.breakpoints)
        s = _frozen(self.slopes)
        c = _frozen(self.intercepts)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "slopes", s)
        object.__setattr__(self, "intercepts", c)
        object.__setattr__(self, "point_values", tuple((float(x), float(y)) for x, y in self.point_values))
        if b.ndim != 1 or len(b) < 2:
            raise SpecError("breakpoints need at least two entries")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise SpecError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(b) <= 0):
            raise SpecError("breakpoints must be strictly increasing")
        if len(s) != len(b) - 1 or len(c) != len(b) - 1:
            raise SpecError("need one slope and one intercept per piece")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(c))):
            raise SpecError("non-finite slope or intercept")

    @property
    def n_pieces(self):
        return len(self.slopes)

    def piece_index(self, x):
        """Index of the piece owning ``x`` (left-closed pieces, x=1 in the last)."""
        k = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(k, 0, self.n_pieces - 1)

    def raw(self, x):
        """Affine value before wrapping and without point overrides."""
        x = np.asarray(x, dtype=float)
        k = self.piece_index(x)
        return self.slopes[k] * x + self.intercepts[k]

    def __call__(self, x):
        return eval_branch(self, x)

    @classmethod
    def affine(cls, slope, intercept=0.0, wrap=False):
        return cls([0.0, 1.0], [slope], [intercept], wrap=wrap)

    @classmethod
    def from_samples(cls, xs, ys, wrap=False):
        """Linear interpolation through dense samples (not exact for Ulam purposes)."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        slopes = np.diff(ys) / np.diff(xs)
        intercepts = ys[:-1] - slopes * xs[:-1]
        return cls(xs, slopes, intercepts, wrap=wrap, exact=False)

    def to_dict(self):
        d = {
            "breakpoints": [float(v) for v in self.breakpoints],
            "slopes": [float(v) for v in self.slopes],
            "intercepts": [float(v) for v in self.intercepts],
            "wrap": bool(self.wrap),
        }
        if self.point_values:
            d["point_values"] = [list(p) for p in self.point_values]
        if not self.exact:
            d["exact"] = False
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["breakpoints"],
            d["slopes"],
            d["intercepts"],
            wrap=bool(d.get("wrap", False)),
            point_values=tuple(tuple(p) for p in d.get("point_values", ())),
            exact=bool(d.get("exact", True)),
        )


def eval_branch(fmap, x):
    """Evaluate a piecewise affine map at ``x`` (scalar or array).

    Raises
    ------
    DomainEscape
        If an unwrapped value falls outside [0, 1].
    """
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    y = fmap.raw(x)
    if fmap.wrap:
        y = np.mod(y, 1.0)
    for px, py in fmap.point_values:
        y = np.where(x == px, py, y)
    if not fmap.wrap and (np.any(y < 0.0) or np.any(y > 1.0)):
        raise DomainEscape("map value outside [0, 1] on an unwrapped branch")
    return float(y) if scalar else y


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Piecewise-constant probability density on [0, 1]."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = _frozen(self.breakpoints)
        v = _frozen(self.values)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)
        if len(b) < 2 or b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise SpecError("noise breakpoints must increase strictly from 0 to 1")
        if len(v) != len(b) - 1:
            raise SpecError("need one noise value per interval")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise NoiseNormalizationError("noise density must be finite and nonnegative")
        total = math.fsum(np.diff(b) * v)
        if abs(total - 1.0) > 1e-12:
            raise NoiseNormalizationError(f"noise density integrates to {total!r}, not 1")
        cum = np.concatenate([[0.0], np.cumsum(np.diff(b) * v)])
        cum[-1] = 1.0
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def uniform(cls):
        return cls([0.0, 1.0], [1.0])

    @classmethod
    def box(cls, a, b):
        """Uniform density on [a, b] inside [0, 1]."""
        edges = [0.0]
        vals = []
        if a > 0:
            edges.append(a)
            vals.append(0.0)
        edges.append(b)
        vals.append(1.0 / (b - a))
        if b < 1:
            edges.append(1.0)
            vals.append(0.0)
        return cls(edges, vals)

    @property
    def is_uniform(self):
        return bool(np.all(self.values == 1.0))

    def pdf(self, t):
        """Density value; zero outside [0, 1]."""
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, len(self.values) - 1)
        out = np.where((t < 0) | (t > 1), 0.0, self.values[k])
        return float(out) if out.ndim == 0 else out

    def cdf(self, t):
        """Distribution function, clipped to [0, 1] outside the unit interval."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        k = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, len(self.values) - 1)
        out = self._cum[k] + self.values[k] * (t - self.breakpoints[k])
        out = np.minimum(out, 1.0)
        return float(out) if out.ndim == 0 else out

    def periodic_cdf(self, z):
        """Integral of the 1-periodic extension of the density from 0 to ``z``."""
        z = np.asarray(z, dtype=float)
        whole = np.floor(z)
        return whole + self.cdf(z - whole)

    def ppf(self, u):
        """Inverse distribution function (left-continuous inverse)."""
        u = np.asarray(u, dtype=float)
        pos = self.values > 0
        # only intervals carrying mass can host a quantile
        cum_lo = self._cum[:-1][pos]
        lo = self.breakpoints[:-1][pos]
        val = self.values[pos]
        k = np.clip(np.searchsorted(cum_lo, u, side="right") - 1, 0, len(val) - 1)
        t = lo[k] + (u - cum_lo[k]) / val[k]
        t = np.clip(t, 0.0, 1.0)
        return float(t) if t.ndim == 0 else t

    def to_dict(self):
        return {"breakpoints": [float(v) for v in self.breakpoints], "values": [float(v) for v in self.values]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["breakpoints"], d["values"])


def sample_noise(noise, seed, counter, stream_id=0):
    """Draw one noise value by inverse CDF from the counter-based stream."""
    return noise.ppf(_rng.uniform_at(seed, stream_id, counter))


@dataclass(frozen=True, eq=False)
class RandomSystem:
    """Validated random map ``f: T x X -> X`` on [0, 1].

    ``kind`` selects the meaning of the remaining fields:

    * ``"ifs"``: ``branches`` chosen with probabilities ``weights``;
    * ``"deterministic"``: a single branch;
    * ``"additive"``: ``f_t(x) = base(x) + t (mod 1)``, t ~ ``noise``;
    * ``"multiplicative"``: ``f_t(x) = (1 - epsilon t) base(x)``;
    * ``"blend"``: ``f_t(x) = t x + (1 - t) base(x)``.

    ``pinned`` lists points where every ``f_t`` is overridden to the
    identity (a null-set modification the kernel cannot see).
    """

    domain: str
    kind: str
    branches: tuple = ()
    weights: tuple = ()
    base: PiecewiseAffineMap | None = None
    noise: NoiseSpec | None = None
    epsilon: float | None = None
    pinned: tuple = ()
    declared_fixed_points: tuple = ()
    system_id: str = ""
    expanding_margin: float | None = field(default=None)
    expanding_on_average: bool = False

    @property
    def declared_atomic(self):
        return self.kind in ATOMIC_KINDS

    @property
    def maps(self):
        """All affine branches involved (IFS branches or the base map)."""
        return self.branches if self.kind in ATOMIC_KINDS else (self.base,)

    @property
    def exact_maps(self):
        return all(m.exact for m in self.maps)

    def to_dict(self):
        d = {"domain": self.domain, "kind": self.kind}
        if self.system_id:
            d["id"] = self.system_id
        if self.kind == "ifs":
            d["branches"] = [b.to_dict() for b in self.branches]
            d["weights"] = [float(w) for w in self.weights]
        elif self.kind == "deterministic":
            d["map"] = self.branches[0].to_dict()
        else:
            d["base"] = self.base.to_dict()
            d["noise"] = self.noise.to_dict()
            if self.kind == "multiplicative":
                d["epsilon"] = float(self.epsilon)
        if self.pinned:
            d["pinned"] = [float(p) for p in self.pinned]
        if self.declared_fixed_points:
            d["fixed_points"] = [float(p) for p in self.declared_fixed_points]
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _branch_index(weights, t):
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.clip(np.searchsorted(cum, t, side="right"), 0, len(weights) - 1)


def apply_random(system, t, x):
    """Evaluate ``f_t(x)`` (vectorised over matching ``t`` and ``x``).

    For an IFS the noise value selects a branch through the cumulative
    weight partition of [0, 1].
    """
    scalar = np.ndim(t) == 0 and np.ndim(x) == 0
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    t, x = np.broadcast_arrays(t, x)
    kind = system.kind
    if kind == "deterministic":
        y = eval_branch(system.branches[0], x)
    elif kind == "ifs":
        idx = _branch_index(np.asarray(system.weights), t)
        y = np.empty_like(x)
        for b, fmap in enumerate(system.branches):
            sel = idx == b
            if np.any(sel):
                y[sel] = eval_branch(fmap, x[sel])
    else:
        f0 = eval_branch(system.base, x)
        if kind == "additive":
            y = np.mod(f0 + t, 1.0)
        elif kind == "multiplicative":
            y = (1.0 - system.epsilon * t) * f0
        elif kind == "blend":
            y = t * x + (1.0 - t) * f0
        else:  # pragma: no cover - guarded by validation
            raise SpecError(kind)
    for p in system.pinned:
        y = np.where(x == p, p, y)
    if system.domain == INTERVAL and kind not in ("additive",):
        if np.any(y < 0.0) or np.any(y > 1.0):
            raise DomainEscape("random map left [0, 1]")
    y = np.asarray(y, dtype=float)
    return float(y) if scalar else y


def affine_in_t(system, x):
    """Write ``f_t(x) = a + b t`` for the noise-driven kinds.

    Point overrides and pins are ignored (null sets).  Returns ``(a, b)``
    arrays; for the additive kind the result is still to be reduced mod 1.
    """
    x = np.asarray(x, dtype=float)
    base = system.base
    f0 = base.raw(x)
    if base.wrap:
        f0 = np.mod(f0, 1.0)
    if system.kind == "additive":
        return f0, np.ones_like(f0)
    if system.kind == "multiplicative":
        return f0, -system.epsilon * f0
    if system.kind == "blend":
        return f0, x - f0
    raise SpecError(f"kind {system.kind!r} is not noise driven")


def transition_density(system, x, y):
    """Density of ``P(x, dy)`` at ``y``, or ``None`` when the kernel is atomic."""
    kind = system.kind
    if kind in ATOMIC_KINDS:
        return None
    if x in system.pinned:
        return None
    f0 = eval_branch(system.base, x)
    p = system.noise
    if kind == "additive":
        return float(p.pdf(np.mod(y - f0, 1.0)))
    if kind == "multiplicative":
        if f0 <= 0.0:
            return None
        eps = system.epsilon
        return float(p.pdf((1.0 - y / f0) / eps) / (eps * f0))
    if kind == "blend":
        span = x - f0
        if span == 0.0:
            return None
        return float(p.pdf((y - f0) / span) / abs(span))
    raise SpecError(kind)


def expanding_margin(branches, weights):
    """``max_x sum_i p_i / |f_i'(x)|`` over the common refinement of the pieces."""
    edges = np.unique(np.concatenate([b.breakpoints for b in branches]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    total = np.zeros_like(mids)
    for fmap, w in zip(branches, weights):
        s = fmap.slopes[fmap.piece_index(mids)]
        if np.any(s == 0):
            return None
        total += w / np.abs(s)
    return float(total.max())


def _check_map_in_domain(fmap, domain):
    if fmap.wrap:
        return
    lo = fmap.slopes * fmap.breakpoints[:-1] + fmap.intercepts
    hi = fmap.slopes * fmap.breakpoints[1:] + fmap.intercepts
    vals = np.concatenate([lo, hi, [v for _, v in fmap.point_values]])
    if np.any(vals < 0.0) or np.any(vals > 1.0):
        raise DomainEscape("branch image leaves [0, 1]; use wrap on a circle")


def _load_schema():
    text = resources.files("transferlab").joinpath("schemas/system.schema.json").read_text()
    return json.loads(text)


def validate_system(spec):
    """Validate a raw specification (dict, JSON string or RandomSystem).

    Returns
    -------
    RandomSystem
        With ``expanding_margin`` filled in for IFS whose slopes never vanish.

    Raises
    ------
    SpecError, WeightSumError, DomainEscape, NoiseNormalizationError
    """
    if isinstance(spec, RandomSystem):
        spec = spec.to_dict()
    if isinstance(spec, str):
        spec = json.loads(spec)
    import jsonschema

    try:
        jsonschema.validate(spec, _load_schema())
    except jsonschema.ValidationError as exc:
        raise SpecError(exc.message) from exc

    domain = spec["domain"]
    kind = spec["kind"]
    pinned = tuple(float(p) for p in spec.get("pinned", ()))
    fixed = tuple(float(p) for p in spec.get("fixed_points", ()))
    kw = dict(domain=domain, kind=kind, pinned=pinned, system_id=spec.get("id", ""))

    if kind in ATOMIC_KINDS:
        if kind == "deterministic":
            branches = (PiecewiseAffineMap.from_dict(spec["map"]),)
            weights = (1.0,)
        else:
            branches = tuple(PiecewiseAffineMap.from_dict(b) for b in spec["branches"])
            weights = tuple(float(w) for w in spec["weights"])
            if len(weights) != len(branches):
                raise SpecError("one weight per branch required")
            if any(w <= 0 for w in weights):
                raise WeightSumError("weights must be positive")
            if abs(math.fsum(weights) - 1.0) > 1e-12:
                raise WeightSumError(f"weights sum to {math.fsum(weights)!r}")
        for b in branches:
            _check_map_in_domain(b, domain)
        margin = expanding_margin(branches, weights)
        system = RandomSystem(
            branches=branches,
            weights=weights,
            expanding_margin=margin,
            expanding_on_average=margin is not None and margin < 1.0,
            **kw,
        )
    else:
        base = PiecewiseAffineMap.from_dict(spec["base"])
        _check_map_in_domain(base, domain)
        noise = NoiseSpec.from_dict(spec["noise"]) if "noise" in spec else NoiseSpec.uniform()
        eps = None
        if kind == "multiplicative":
            if "epsilon" not in spec:
                raise SpecError("multiplicative noise needs epsilon")
            eps = float(spec["epsilon"])
            if not 0.0 < eps <= 1.0:
                raise SpecError("epsilon must lie in (0, 1]")
        if kind == "blend" and not noise.is_uniform:
            raise SpecError("blend noise is uniform by definition")
        system = RandomSystem(base=base, noise=noise, epsilon=eps, **kw)

    ts = np.linspace(0.0, 1.0, 1001)
    for xstar in fixed:
        ys = apply_random(system, ts, np.full_like(ts, xstar))
        if np.max(np.abs(ys - xstar)) != 0.0:
            raise SpecError(f"declared fixed point {xstar} is not fixed by every f_t")
    return _replace(system, declared_fixed_points=fixed)


def _replace(system, **changes):
    import dataclasses

    return dataclasses.replace(system, **changes)


def load_system(path):
    with open(path) as fh:
        return validate_system(json.load(fh))
