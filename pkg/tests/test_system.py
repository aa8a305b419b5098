import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transferlab import rng as trng
from transferlab.errors import DomainEscape, NoiseNormalizationError, WeightSumError
from transferlab.system import (
    NoiseSpec,
    PiecewiseAffineMap,
    apply_random,
    eval_branch,
    load_system,
    sample_noise,
    transition_density,
    validate_system,
)
from transferlab import gallery

from conftest import affine, deterministic, ifs, noise_system

DOUBLING = PiecewiseAffineMap.affine(2.0, 0.0, wrap=True)


class TestEvalBranch:
    def test_doubling_three_quarters(self):
        assert eval_branch(DOUBLING, 0.75) == 0.5

    def test_half_map_fixes_zero(self):
        assert eval_branch(PiecewiseAffineMap.affine(0.5), 0.0) == 0.0

    def test_wrap_on_breakpoint(self):
        assert eval_branch(DOUBLING, 0.5) == 0.0

    def test_escape_raises(self):
        with pytest.raises(DomainEscape):
            eval_branch(PiecewiseAffineMap.affine(2.0), 0.75)

    def test_right_closed_pieces(self):
        m = PiecewiseAffineMap(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.0]), np.array([0.25, 0.75]), False)
        assert eval_branch(m, 0.5) == 0.75
        assert eval_branch(m, 1.0) == 0.75


class TestSampleNoise:
    def test_uniform_identity(self):
        assert NoiseSpec.uniform().ppf(0.3) == pytest.approx(0.3, abs=1e-15)

    def test_quarter_box(self):
        p = NoiseSpec(np.array([0.0, 0.25, 1.0]), np.array([4.0, 0.0]))
        assert p.ppf(0.5) == pytest.approx(0.125, abs=1e-15)

    def test_upper_half_box_left_end(self):
        p = NoiseSpec(np.array([0.0, 0.5, 1.0]), np.array([0.0, 2.0]))
        assert p.ppf(0.0) == 0.5

    def test_stream_reproducible(self):
        p = NoiseSpec.uniform()
        a = [sample_noise(p, 7, c, stream_id=3) for c in range(20)]
        b = [sample_noise(p, 7, c, stream_id=3) for c in range(20)]
        assert a == b
        assert a[0] == trng.uniform_at(7, 3, 0)

    def test_bad_normalisation(self):
        with pytest.raises(NoiseNormalizationError):
            validate_system({"domain": "circle", "kind": "additive", "base": affine(1.0, 0.0, True),
                             "noise": {"breakpoints": [0.0, 1.0], "values": [2.0]}})


class TestApplyRandom:
    def test_multiplicative(self):
        s = noise_system("multiplicative", affine(0.5), epsilon=0.5)
        assert apply_random(s, 1.0, 0.8) == pytest.approx(0.2, abs=1e-15)

    def test_additive_wraps(self):
        s = noise_system("additive", affine(2.0, 0.0, True), domain="circle")
        assert apply_random(s, 0.25, 0.5) == 0.25

    def test_ifs_branch_by_weight_partition(self):
        s = ifs([affine(0.5), affine(0.5, 0.5)])
        assert apply_random(s, 0.7, 0.5) == 0.75
        assert apply_random(s, 0.2, 0.5) == 0.25

    def test_pinned_point_is_fixed(self):
        s = gallery.get("additive_pinned_zero").system()
        ts = np.linspace(0, 1, 1001)[:-1]
        assert np.all(apply_random(s, ts, np.zeros_like(ts)) == 0.0)

    @pytest.mark.parametrize("entry", [e.id for e in gallery.list_gallery()])
    def test_values_stay_in_unit_interval(self, entry):
        s = gallery.get(entry).system()
        g = np.random.default_rng(1)
        t, x = g.random(10_000), g.random(10_000)
        y = apply_random(s, t, x)
        assert np.all((y >= 0.0) & (y <= 1.0))

    @pytest.mark.parametrize("entry", [e.id for e in gallery.list_gallery() if e.spec.get("fixed_points")])
    def test_declared_fixed_points_exact(self, entry):
        s = gallery.get(entry).system()
        ts = trng.uniforms(0, 99, 0, 1000)
        for x in s.declared_fixed_points:
            assert np.all(apply_random(s, ts, np.full(1000, x)) == x)


class TestTransitionDensity:
    def test_additive_quarter_box(self):
        s = noise_system("additive", affine(2.0, 0.0, True),
                         {"breakpoints": [0.0, 0.25, 1.0], "values": [4.0, 0.0]}, domain="circle")
        assert transition_density(s, 0.0, 0.1) == 4.0

    def test_atomic_is_none(self):
        s = ifs([affine(0.5), affine(0.5, 0.5)])
        assert transition_density(s, 0.3, 0.2) is None

    def test_uniform_additive(self):
        s = noise_system("additive", affine(2.0, 0.0, True), domain="circle")
        assert transition_density(s, 0.3, 0.9) == 1.0

    def test_additive_rows_integrate_to_one(self):
        s = gallery.get("two_sink_additive").system()
        ys = (np.arange(4000) + 0.5) / 4000
        for x in np.random.default_rng(0).random(20):
            total = np.mean([transition_density(s, x, y) for y in ys])
            assert total == pytest.approx(1.0, abs=1e-3)

    def test_multiplicative_density_integrates(self):
        s = noise_system("multiplicative", affine(0.5), epsilon=0.5)
        ys = (np.arange(4000) + 0.5) / 4000
        vals = np.array([transition_density(s, 0.8, y) for y in ys])
        assert vals.mean() == pytest.approx(1.0, abs=1e-3)


class TestValidate:
    def test_expanding_margin(self):
        s = ifs([affine(2.0, 0.0, True), affine(3.0, 0.0, True)], domain="circle")
        assert s.expanding_margin == pytest.approx(5 / 12, abs=1e-15)
        assert s.expanding_on_average

    def test_weight_sum(self):
        with pytest.raises(WeightSumError):
            ifs([affine(0.5), affine(0.5, 0.5)], weights=[0.6, 0.5])

    def test_deterministic_is_atomic(self):
        s = deterministic(affine(2.0, 0.0, True))
        assert s.declared_atomic

    def test_unwrapped_escape_rejected(self):
        with pytest.raises(DomainEscape):
            ifs([affine(2.0)])

    def test_json_round_trip(self, tmp_path):
        for e in gallery.list_gallery():
            p = tmp_path / f"{e.id}.json"
            p.write_text(e.system().to_json())
            again = load_system(p)
            assert again.to_dict() == e.system().to_dict()


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_blend_stays_between_x_and_base(t, x):
    s = noise_system("blend", affine(0.5, 0.25))
    y = apply_random(s, t, x)
    lo, hi = sorted((x, 0.5 * x + 0.25))
    assert lo - 1e-15 <= y <= hi + 1e-15
