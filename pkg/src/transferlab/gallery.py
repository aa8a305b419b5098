"""Catalogue of example random systems with their known classification.

Each entry stores a system specification (the same JSON shape accepted by
:func:`transferlab.system.validate_system`) and the verdicts that are known
analytically.  Only the classes listed in ``expected`` are asserted; the
rest are left to the probes.

Irrational rotation angles are kept as symbolic tags and evaluated with
50-digit decimal arithmetic before rounding to the nearest double, so the
"irrational" entries are honest high-denominator rationals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal, getcontext
from functools import lru_cache

import numpy as np

from .errors import UnknownId
from .system import PiecewiseAffineMap, validate_system

ALIASES = {"direct_sum": "direct_sum_expanding_contracting"}


def angle(tag):
    """Double nearest to the irrational constant named by ``tag``."""
    getcontext().prec = 50
    two = Decimal(2)
    five = Decimal(5)
    values = {
        "sqrt2_over_2": two.sqrt() / 2,
        "sqrt2_over_4": two.sqrt() / 4,
        "sqrt2_over_4_plus_half": two.sqrt() / 4 + Decimal("0.5"),
        "golden": (five.sqrt() - 1) / 2,
    }
    return float(values[tag])


@dataclass(frozen=True)
class GalleryEntry:
    id: str
    spec: dict
    expected: dict
    expected_components: object = "unspecified"
    notes: str = ""
    exploratory: bool = False
    tags: dict = field(default_factory=dict)

    def system(self):
        return validate_system(self.spec)

    def to_json(self):
        return json.dumps(self.spec, indent=2, sort_keys=True) + "\n"


def _map(breaks, slopes, icpts, wrap=False, **kw):
    d = {"breakpoints": list(breaks), "slopes": list(slopes), "intercepts": list(icpts), "wrap": wrap}
    d.update(kw)
    return d


def _affine(s, c=0.0, wrap=False):
    return _map([0.0, 1.0], [s], [c], wrap)


def _rotation(a):
    return _affine(1.0, a, wrap=True)


def _ifs(eid, domain, branches, weights=None):
    weights = weights or [1.0 / len(branches)] * len(branches)
    return {"id": eid, "domain": domain, "kind": "ifs", "branches": branches, "weights": weights}


def _gradient_map(n_samples=4097):
    """Time-one map of the gradient flow of ``X^4 sin(1/X)``, ``X = (2/pi)(x - 1/2)``.

    Tabulated on a uniform grid and clipped to [0, 1]; the flow leaves the
    interval near ``x = 1`` and the clip keeps the blend inside the domain.
    """
    from scipy.integrate import solve_ivp

    c = 2.0 / np.pi

    def rhs(_t, x):
        X = c * (x - 0.5)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(X == 0.0, 0.0, 4 * X ** 3 * np.sin(1 / np.where(X == 0, 1, X)) - X ** 2 * np.cos(1 / np.where(X == 0, 1, X)))
        return c * d

    xs = np.linspace(0.0, 1.0, n_samples)
    sol = solve_ivp(rhs, (0.0, 1.0), xs, rtol=1e-10, atol=1e-12, vectorized=True)
    ys = np.clip(sol.y[:, -1], 0.0, 1.0)
    m = PiecewiseAffineMap.from_samples(xs, ys)
    return m.to_dict()


def _two_sink_base():
    # sinks at 1/4 and 3/4 with contraction 1/2, repelling fixed point 1/2;
    # the noise (width 1/8) is centred by shifting the base down by 1/16
    b = [0.0, 3 / 8, 1 / 2, 5 / 8, 1.0]
    s = [0.5, 1.5, 1.5, 0.5]
    g = [0.125, -0.25, -0.25, 0.375]
    return _map(b, s, [v - 1 / 16 for v in g])


def _entries():
    r2_2 = angle("sqrt2_over_2")
    r2_4 = angle("sqrt2_over_4")
    r2_4h = angle("sqrt2_over_4_plus_half")
    third_map = _map([0.0, 0.5, 2 / 3, 5 / 6, 1.0], [0.5, 3.0, 3.0, 3.0], [0.0, -1.0, -1.5, -2.0])
    E = [
        GalleryEntry(
            "bernoulli_convolution",
            _ifs("bernoulli_convolution", "interval", [_affine(0.5), _affine(0.5, 0.5)]),
            {"S": "for", "MC": "for", "AC": "for", "C": "against", "UC": "against"},
            1,
            "Random contractions x/2 and x/2 + 1/2: asymptotically constrictive but not constrictive; "
            "Lebesgue is mixing but not exact.",
        ),
        GalleryEntry(
            "expanding_ifs_23",
            _ifs("expanding_ifs_23", "circle", [_affine(2.0, 0.0, True), _affine(3.0, 0.0, True)]),
            {"C": "for", "UC": "against"},
            1,
            "Random expanding maps 2x and 3x mod 1 (expanding on average): constrictive, atomic kernel.",
        ),
        GalleryEntry(
            "rotations_irrational_diff",
            _ifs("rotations_irrational_diff", "circle", [_rotation(r2_2), _rotation(0.0)]),
            {"C": "for"},
            1,
            "Random rotations with irrational angle difference: constrictive.  The angle is the double "
            "nearest sqrt(2)/2, so the irrationality is only visible up to machine precision.",
            tags={"alpha": "sqrt2_over_2", "beta": "0"},
        ),
        GalleryEntry(
            "rotations_rational_diff",
            _ifs("rotations_rational_diff", "circle", [_rotation(r2_4), _rotation(r2_4h)]),
            {"MC": "for", "AC": "against"},
            "unspecified",
            "Random rotations by irrational angles with rational difference 1/2: mean constrictive but "
            "not asymptotically constrictive.",
            tags={"alpha": "sqrt2_over_4", "beta": "sqrt2_over_4_plus_half"},
        ),
        GalleryEntry(
            "rotations_rational",
            _ifs("rotations_rational", "circle", [_rotation(0.25), _rotation(0.75)]),
            {"WAP": "for", "MC": "against"},
            "unspecified",
            "Random rotations by 1/4 and 3/4: weakly almost periodic but not mean constrictive "
            "(small sets of four arcs are invariant).",
        ),
        GalleryEntry(
            "additive_pinned_zero",
            {
                "id": "additive_pinned_zero",
                "domain": "interval",
                "kind": "additive",
                "base": _affine(2.0, 0.0, True),
                "noise": {"breakpoints": [0.0, 1.0], "values": [1.0]},
                "pinned": [0.0],
                "fixed_points": [0.0],
            },
            {"UC": "for", "D": "against"},
            1,
            "Uniform additive noise with f_t(0) = 0 for every t: every transition is Lebesgue except on "
            "the null set {0}, so uniformly constrictive but not Doeblin.",
        ),
        GalleryEntry(
            "alternating_halves",
            {
                "id": "alternating_halves",
                "domain": "circle",
                "kind": "additive",
                "base": _map([0.0, 0.5, 1.0], [0.0, 0.0], [0.5, 0.0]),
                "noise": {"breakpoints": [0.0, 0.5, 1.0], "values": [2.0, 0.0]},
            },
            {"D": "for", "Dstar": "against"},
            1,
            "Each step moves a point to a uniform position in the other half (the two halves of the "
            "original (-1, 1] rescaled to [0, 1/2) and [1/2, 1]): Doeblin, period two, not uniformly ergodic.",
        ),
        GalleryEntry(
            "mult_contraction",
            {
                "id": "mult_contraction",
                "domain": "interval",
                "kind": "multiplicative",
                "base": _affine(0.5),
                "noise": {"breakpoints": [0.0, 1.0], "values": [1.0]},
                "epsilon": 0.5,
                "fixed_points": [0.0],
            },
            {"S": "against"},
            "unspecified",
            "Multiplicative noise over x/2: every orbit tends to 0, no invariant density.",
        ),
        GalleryEntry(
            "mult_jump",
            {
                "id": "mult_jump",
                "domain": "interval",
                "kind": "multiplicative",
                "base": _map([0.0, 1.0], [0.5], [0.0], point_values=[[0.0, 0.5]]),
                "noise": {"breakpoints": [0.0, 1.0], "values": [1.0]},
                "epsilon": 0.5,
            },
            {"S": "against"},
            "unspecified",
            "As mult_contraction but f_0(0) = 1/2: no common fixed point, still no invariant density.",
        ),
        GalleryEntry(
            "mult_doubling",
            {
                "id": "mult_doubling",
                "domain": "interval",
                "kind": "multiplicative",
                "base": _affine(2.0, 0.0, True),
                "noise": {"breakpoints": [0.0, 1.0], "values": [1.0]},
                "epsilon": 0.5,
            },
            {"C": "for"},
            1,
            "Multiplicative noise over the doubling map: constrictive.",
        ),
        GalleryEntry(
            "blend_gradient_sinks",
            {
                "id": "blend_gradient_sinks",
                "domain": "interval",
                "kind": "blend",
                "base": _gradient_map(),
                "noise": {"breakpoints": [0.0, 1.0], "values": [1.0]},
            },
            {},
            "unspecified",
            "Blend noise over the time-one gradient map of X^4 sin(1/X): infinitely many sinks; the "
            "number of detected basins grows with resolution.  Exploratory.",
            exploratory=True,
        ),
        GalleryEntry(
            "direct_sum_expanding_contracting",
            _ifs(
                "direct_sum_expanding_contracting",
                "interval",
                [
                    _map([0.0, 0.5, 0.75, 1.0], [0.5, 2.0, 2.0], [0.0, -0.5, -1.0]),
                    third_map,
                ],
            ),
            {"S": "for", "WAP": "against"},
            2,
            "x/2 on [0, 1/2) next to the rescaled expanding pair 2u, 3u mod 1 on [1/2, 1]: an invariant "
            "density exists but none has maximal support.  On a grid the contracting half collapses "
            "into the lowest cell, which shows up as a second (atomic) component.",
        ),
        GalleryEntry(
            "two_sink_additive",
            {
                "id": "two_sink_additive",
                "domain": "interval",
                "kind": "additive",
                "base": _two_sink_base(),
                "noise": {"breakpoints": [0.0, 0.125, 1.0], "values": [8.0, 0.0]},
            },
            {"MC": "for"},
            ">=2",
            "Two sinks at 1/4 and 3/4 with small additive noise: two ergodic stationary densities trap "
            "neighbourhoods of the sinks, while points near the repeller 1/2 split between them.",
        ),
        GalleryEntry(
            "deterministic_doubling",
            {"id": "deterministic_doubling", "domain": "circle", "kind": "deterministic",
             "map": _affine(2.0, 0.0, True), "fixed_points": [0.0]},
            {"C": "for", "UC": "against"},
            1,
            "Doubling map: constrictive, point-mass kernel.",
        ),
        GalleryEntry(
            "deterministic_rational_rotation",
            {"id": "deterministic_rational_rotation", "domain": "circle", "kind": "deterministic",
             "map": _rotation(0.375)},
            {"WAP": "for", "MC": "against"},
            "unspecified",
            "Rotation by 3/8: weakly almost periodic but not mean constrictive.",
        ),
    ]
    return {e.id: e for e in E}


@lru_cache(maxsize=1)
def _catalogue():
    return _entries()


def list_gallery():
    """All entries, in catalogue order."""
    return list(_catalogue().values())


def get(eid):
    eid = ALIASES.get(eid, eid)
    try:
        return _catalogue()[eid]
    except KeyError:
        raise UnknownId(eid) from None


def expected_report(eid):
    """Expected verdicts of entry ``eid``; raises :class:`UnknownId`."""
    return dict(get(eid).expected)
