from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncea.landscape import neutral_rate, random_walk
from asyncea.problems import (
    ConstantProblem,
    DemandProfile,
    LoadFollowingSurrogate,
    MalformedTrajectoryError,
    NKLandscape,
    Quantized,
    SeparableProblem,
    SurrogateConstants,
    Trajectory,
    control_diagram_criterion,
    make_problem,
    nk_landscape,
    ps_insertion,
    quantize,
    simulate_transient,
    total_travel,
    tr_speed,
)
from asyncea.search_space import BoundsSpec, ConfigurationError, MutationParams, validate
from tests.oracles import naive_criterion, nk_fitness


def _traj(p, ao):
    p = np.asarray(p, float)
    return Trajectory(np.arange(p.size, dtype=float), p, np.asarray(ao, float))


class TestCriterion:
    def test_worked_three_point_example(self):
        f = control_diagram_criterion(_traj([1.0, 0.8, 0.6], [0.0, 0.05, 0.0]))
        assert f == pytest.approx(0.0064, abs=1e-12)
        assert naive_criterion([1.0, 0.8, 0.6], [0.0, 0.05, 0.0]) == pytest.approx(0.0064, abs=1e-12)

    def test_on_reference_line(self):
        assert control_diagram_criterion(_traj([1.0, 0.7, 0.5, 0.9], [0.1] * 4)) == 0.0

    def test_constant_power_gives_zero(self):
        assert control_diagram_criterion(_traj([0.8] * 5, [0.0, 0.3, -0.2, 0.1, 0.5])) == 0.0

    def test_needs_two_points(self):
        with pytest.raises(MalformedTrajectoryError):
            control_diagram_criterion(_traj([1.0], [0.0]))

    def test_matches_naive_sum_on_random_trajectories(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            n = int(rng.integers(2, 200))
            p = rng.uniform(0.0, 1.05, n)
            ao = rng.uniform(-1, 1, n)
            ref = naive_criterion(p.tolist(), ao.tolist())
            got = control_diagram_criterion(_traj(p, ao))
            assert got == pytest.approx(ref, rel=1e-12, abs=1e-300)

    @given(st.lists(st.tuples(st.floats(0, 1.05), st.floats(-1, 1)), min_size=2, max_size=50))
    def test_non_negative(self, pts):
        p, ao = zip(*pts)
        assert control_diagram_criterion(_traj(p, ao)) >= 0.0

    def test_delta_i_is_power_times_ao(self):
        t = _traj([1.0, 0.5], [0.2, -0.4])
        assert np.array_equal(t.delta_i, np.array([0.2, -0.2]))


class TestPSInsertion:
    def test_zero_totalizer(self):
        assert np.all(ps_insertion(0, (185, 175, 160)) == 0)

    def test_full_overlap(self):
        g = ps_insertion(100, (255, 0, 0))
        assert g[0] == g[1] == 100

    def test_reference_overlap(self):
        g = ps_insertion(100, (185, 175, 160))
        assert list(g) == [100, 30, 0, 0]

    def test_full_travel(self):
        ov = (185, 175, 160)
        assert list(ps_insertion(total_travel(ov), ov)) == [255] * 4

    def test_overlap_above_height(self):
        with pytest.raises(ConfigurationError):
            ps_insertion(10, (300, 0, 0))

    def test_totalizer_out_of_range(self):
        with pytest.raises(ValueError):
            ps_insertion(-1, (0, 0, 0))

    @settings(max_examples=100)
    @given(st.tuples(*[st.integers(0, 255)] * 3))
    def test_monotone_and_conserving(self, ov):
        # every unit of totalizer moves each engaged group by one unit
        travel = int(total_travel(ov))
        prev = ps_insertion(0, ov)
        for T in range(1, travel + 1, max(1, travel // 97)):
            cur = ps_insertion(T, ov)
            assert np.all(cur >= prev)
            prev = cur
        step = np.diff([ps_insertion(T, ov) for T in range(0, min(travel, 60) + 1)], axis=0)
        assert np.all((step == 0) | (step == 1))
        assert np.all(step.sum(axis=1) >= 1)


class TestTRSpeed:
    def test_dead_band(self):
        assert tr_speed(0.5, 0.8, 72, 8) == 0.0
        assert tr_speed(-0.8, 0.8, 72, 8) == 0.0

    def test_saturation(self):
        assert tr_speed(3.0, 0.8, 72, 8) == 72
        assert tr_speed(-3.0, 0.8, 72, 8) == -72

    def test_ramp_is_linear_and_jumps_at_dead_band(self):
        assert tr_speed(0.8 + 1e-12, 0.8, 72, 8) == pytest.approx(8)
        assert tr_speed(1.8, 0.8, 72, 8) == pytest.approx(8 + 64 * 1.0 / 2.0)

    @given(st.floats(-10, 10), st.floats(0.1, 2.5), st.floats(1, 20), st.floats(0, 100))
    def test_odd_and_bounded(self, dT, db, vmin, extra):
        vmax = vmin + extra
        s = tr_speed(dT, db, vmax, vmin)
        assert tr_speed(-dT, db, vmax, vmin) == -s
        assert abs(s) <= vmax + 1e-9


class TestSurrogate:
    def test_reference_candidate_in_search_encoding(self, surrogate):
        x = surrogate.reference_candidate()
        assert validate(x, surrogate.bounds)
        assert list(x) == [185, 175, 160, 60, 60, 60, 60, 12, 8, 27, 8]

    def test_reference_fitness_positive(self, surrogate):
        assert surrogate.reference_fitness() > 0

    def test_deterministic(self, surrogate):
        x = surrogate.reference_candidate()
        a, b = surrogate.simulate(x), surrogate.simulate(x)
        assert np.array_equal(a.ao, b.ao) and np.array_equal(a.p_r, b.p_r)

    def test_default_profile_shape(self, surrogate):
        t = surrogate.simulate(surrogate.reference_candidate())
        assert len(t) == 661 and t.t[-1] == 11 * 3600
        assert np.all(np.diff(t.t) > 0)
        assert t.p_r.max() == 1.0 and t.p_r.min() == 0.5
        assert np.all(np.abs(t.ao) <= 1)

    def test_constant_profile_has_constant_ao(self, surrogate, table_bounds):
        prof = DemandProfile.constant(1.0)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.integers(table_bounds.lb, table_bounds.ub + 1)
            t = surrogate.simulate(x, prof)
            assert np.ptp(t.ao) == pytest.approx(0.0, abs=1e-12)
            assert control_diagram_criterion(t) == 0.0

    def test_faster_ps_speeds_reduce_ao_excursion(self, surrogate):
        base = surrogate.reference_candidate().copy()
        base[3:7] = 50
        fast, slow = base.copy(), base.copy()
        fast[3:7] = 100
        slow[3:7] = 25
        dev = lambda x: np.max(np.abs(surrogate.simulate(x).ao - surrogate.simulate(x).ao[0]))  # noqa: E731
        assert dev(fast) <= dev(slow)

    def test_every_variable_matters(self, surrogate):
        x = surrogate.reference_candidate()
        f0 = surrogate(x)
        for j in range(11):
            y = x.copy()
            y[j] = surrogate.bounds.lb[j] if x[j] != surrogate.bounds.lb[j] else surrogate.bounds.ub[j]
            assert surrogate(y) != f0, f"variable {j} has no influence"

    def test_simulate_transient_helper(self, surrogate):
        x = surrogate.reference_candidate()
        assert np.array_equal(simulate_transient(x).ao, surrogate.simulate(x).ao)

    def test_constants_roundtrip_and_unknown(self):
        c = SurrogateConstants()
        assert SurrogateConstants.from_dict(c.to_dict()) == c
        with pytest.raises(ConfigurationError):
            SurrogateConstants.from_dict({"warp_factor": 9})

    def test_trajectory_csv(self, surrogate, tmp_path):
        path = tmp_path / "traj.csv"
        surrogate.simulate(surrogate.reference_candidate()).to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,P_r,AO,dI" and len(lines) == 662


class TestNK:
    def test_constant_tables(self):
        prob = NKLandscape(6, 2, seed=1, tables=np.full((6, 8), 0.5))
        rng = np.random.default_rng(0)
        for x in rng.integers(0, 2, size=(20, 6)):
            assert prob(x) == 0.5

    def test_small_table_matches_recomputation(self):
        prob = nk_landscape(4, 1, seed=3)
        table = prob.enumerate_all()
        for code in range(16):
            bits = [(code >> i) & 1 for i in range(4)]
            expected = nk_fitness(bits, prob.tables.tolist(), prob.links.tolist())
            assert table[code] == pytest.approx(expected, abs=1e-15)
            assert prob(np.array(bits)) == pytest.approx(expected, abs=1e-15)

    def test_enumeration_optimum_is_a_lower_bound(self, nk16):
        table = nk16.enumerate_all()
        assert table.shape == (2**16,)
        rng = np.random.default_rng(1)
        for x in rng.integers(0, 2, size=(200, 16)):
            assert nk16(x) >= table.min()

    def test_reproducible(self):
        assert np.array_equal(nk_landscape(10, 3, 5).tables, nk_landscape(10, 3, 5).tables)

    @pytest.mark.parametrize("N, K", [(4, 0), (4, 4), (25, 2)])
    def test_parameter_range(self, N, K):
        with pytest.raises(ConfigurationError):
            NKLandscape(N, K)


class TestQuantize:
    def test_floor_arithmetic(self):
        b = BoundsSpec(lb=[0], ub=[1])
        assert quantize(ConstantProblem(b, 0.123), 0.05)([0]) == pytest.approx(0.10)

    def test_fine_grain_preserves_fitness(self, surrogate, table_bounds):
        q = quantize(surrogate, 1e-9)
        rng = np.random.default_rng(2)
        for x in rng.integers(table_bounds.lb, table_bounds.ub + 1, size=(10, 11)):
            assert q(x) == pytest.approx(surrogate(x), abs=1e-8)

    def test_grain_must_be_positive(self, surrogate):
        with pytest.raises(ConfigurationError):
            Quantized(surrogate, 0.0)

    def test_neutral_rate_grows_with_grain(self, surrogate):
        m = MutationParams(0.1, 0.05)
        rates = [neutral_rate(random_walk(quantize(surrogate, g), m, 512, seed=0)) for g in (1e-4, 1e-3, 1e-2)]
        assert rates[0] < rates[1] < rates[2]


class TestRegistry:
    def test_names(self):
        assert isinstance(make_problem("nroo-surrogate"), LoadFollowingSurrogate)
        assert isinstance(make_problem("nk", N=8, K=2, seed=0), NKLandscape)
        assert isinstance(make_problem("separable"), SeparableProblem)
        assert isinstance(make_problem("constant", value=2.0), ConstantProblem)
        assert isinstance(make_problem("nk", N=8, K=2, grain=0.1), Quantized)

    def test_unknown(self):
        with pytest.raises(ConfigurationError):
            make_problem("tsp")
        with pytest.raises(ConfigurationError):
            make_problem("nk", N=8, K=2, colour="red")

    def test_separable_optimum_at_target(self):
        prob = make_problem("separable")
        assert prob(prob.target) == 0.0
        # each coordinate at a bound contributes its normalized distance
        assert math.isclose(prob(prob.bounds.lb), float(np.sum((prob.target - prob.bounds.lb) / prob.bounds.width)))
