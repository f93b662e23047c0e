from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncea.engine import (
    EvalMessage,
    EvalResult,
    LatencyModel,
    LocalTransport,
    Master,
    RunConfig,
    SimulatedTransport,
    TransportError,
    handle_crash,
    run_ea,
    run_sync_baseline,
    simulate_transport,
)
from asyncea.problems import ConstantProblem, NKLandscape, SeparableProblem
from asyncea.search_space import BoundsSpec, ConfigurationError, MutationParams, hash_key, nroo_bounds


def _csv(trace) -> str:
    import tempfile, os  # noqa: E401

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "t.csv")
        trace.to_csv(path)
        with open(path, encoding="utf-8") as fh:
            return fh.read()


def _hours(h):
    return h * 3600.0


class TestLatencyModel:
    def test_defaults_match_reported_statistics(self):
        draws = LatencyModel().sample(np.random.default_rng(0), 100_000)
        assert abs(draws.mean() - 2426) / 2426 < 0.02
        assert draws.min() >= 1629 and draws.max() <= 6169

    def test_fitted_clamped_mean_is_exact(self):
        lm = LatencyModel()
        mu, sigma = lm.params()
        assert lm.clamped_mean(mu, sigma) == pytest.approx(2426, abs=1e-6)
        # documented fit values
        assert sigma == pytest.approx(0.626, abs=1e-3)
        assert mu == pytest.approx(6.486, abs=1e-3)

    def test_constant(self):
        lm = LatencyModel.constant(100.0)
        assert lm.sample(np.random.default_rng(0)) == 100.0
        assert np.all(lm.sample(np.random.default_rng(0), 5) == 100.0)

    @pytest.mark.parametrize("args", [(10, 5, 20), (10, 25, 20), (10, 10, 20)])
    def test_invalid(self, args):
        with pytest.raises(ConfigurationError):
            LatencyModel(*args)


class TestRunConfig:
    def test_lambda(self):
        assert RunConfig(workers=64).lam == 63

    @pytest.mark.parametrize("kw", [{"workers": 1}, {"time_limit": 0}, {"crash_prob": 1.5},
                                    {"max_evaluations": 0}, {"retry_cap": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            RunConfig(**kw)


class TestTransport:
    def test_completion_order_with_worker_tiebreak(self):
        cfg = RunConfig(workers=5, latency=LatencyModel.constant(10.0))
        tr = simulate_transport(cfg, ConstantProblem(BoundsSpec(lb=[0], ub=[9]), 1.0))
        for wid in (3, 0, 2, 1):
            tr.send(EvalMessage(wid, np.array([wid]), 0.0))
        order = [tr.receive().worker_id for _ in range(4)]
        assert order == [0, 1, 2, 3]
        assert tr.receive() is None

    def test_deadline(self):
        cfg = RunConfig(workers=2, latency=LatencyModel.constant(10.0))
        tr = SimulatedTransport(cfg, ConstantProblem(BoundsSpec(lb=[0], ub=[9])))
        tr.send(EvalMessage(0, np.array([1]), 0.0))
        assert tr.receive(deadline=5.0) is None
        res = tr.receive(deadline=10.0)
        assert res.completion_time == 10.0 >= res.dispatch_time

    def test_busy_worker_rejected(self):
        tr = SimulatedTransport(RunConfig(workers=3), ConstantProblem(BoundsSpec(lb=[0], ub=[9])))
        tr.send(EvalMessage(0, np.array([1]), 0.0))
        with pytest.raises(TransportError):
            tr.send(EvalMessage(0, np.array([2]), 0.0))
        with pytest.raises(TransportError):
            tr.send(EvalMessage(7, np.array([2]), 0.0))


class TestAlgorithm:
    def test_constant_problem_plateau_drift(self, table_bounds):
        cfg = RunConfig(workers=8, time_limit=_hours(10), seed=2)
        trace = run_ea(cfg, ConstantProblem(table_bounds, 0.5))
        assert trace.n_evaluations > 0
        assert all(r.is_best_update for r in trace.rows)
        assert trace.best_fitness == 0.5
        assert trace.n_strict_improvements == 1
        # x* moves while f* stays put
        best_keys = {hash_key(r.candidate) for r in trace.rows}
        assert len(best_keys) == trace.n_evaluations

    def test_best_so_far_monotone_and_consistent(self, table_bounds):
        trace = run_ea(RunConfig(workers=16, time_limit=_hours(20), seed=4), SeparableProblem(table_bounds))
        hist = trace.best_history()
        assert np.all(np.diff(hist) <= 0)
        assert trace.best_fitness == min(r.fitness for r in trace.rows)
        assert all(r.time <= _hours(20) for r in trace.rows)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 12), st.floats(0.0, 0.3))
    def test_no_duplicate_dispatch(self, seed, workers, crash):
        prob = NKLandscape(10, 2, seed=1)
        cfg = RunConfig(workers=workers, time_limit=math.inf, seed=seed, crash_prob=crash,
                        mutation=MutationParams(0.3, 0.5, 1), max_evaluations=400)
        trace = run_ea(cfg, prob)
        keys = [hash_key(x) for x in trace.dispatched]
        assert len(keys) == len(set(keys))

    def test_small_space_exhaustion_truncates(self):
        prob = NKLandscape(5, 1, seed=0)
        cfg = RunConfig(workers=4, time_limit=math.inf, mutation=MutationParams(0.5, 0.5, 1))
        trace = run_ea(cfg, prob)
        assert trace.truncated
        assert len(trace.dispatched) == 32
        assert len({hash_key(x) for x in trace.dispatched}) == 32
        assert trace.best_fitness == prob.enumerate_all().min()

    def test_saturation_falls_back_to_sobol(self):
        prob = NKLandscape(8, 2, seed=0)
        cfg = RunConfig(workers=3, time_limit=math.inf, max_evaluations=200, retry_cap=5,
                        mutation=MutationParams(0.05, 0.5, 1))
        trace = run_ea(cfg, prob)
        assert trace.n_saturations > 0
        assert len({hash_key(x) for x in trace.dispatched}) == len(trace.dispatched)

    def test_deterministic_trace(self, table_bounds):
        cfg = RunConfig(workers=12, time_limit=_hours(12), seed=9, crash_prob=0.05)
        a = run_ea(cfg, SeparableProblem(table_bounds))
        b = run_ea(cfg, SeparableProblem(table_bounds))
        assert _csv(a) == _csv(b)
        assert np.array_equal(a.best_x, b.best_x)

    def test_target_stops_early(self, nk16):
        optimum = float(nk16.enumerate_all().min())
        cfg = RunConfig(workers=16, time_limit=math.inf, max_evaluations=50_000, seed=0,
                        mutation=MutationParams(0.3, 0.5, 1), target=optimum)
        trace = run_ea(cfg, nk16)
        assert trace.best_fitness == optimum
        assert trace.rows[-1].fitness == optimum and trace.n_evaluations < 50_000

    def test_init_seed_changes_population(self, table_bounds):
        a = run_ea(RunConfig(workers=6, max_evaluations=5, time_limit=math.inf, seed=0, init_seed=0),
                   SeparableProblem(table_bounds))
        b = run_ea(RunConfig(workers=6, max_evaluations=5, time_limit=math.inf, seed=0, init_seed=1),
                   SeparableProblem(table_bounds))
        assert not np.array_equal(np.array(a.dispatched[:5]), np.array(b.dispatched[:5]))

    def test_nk_best_bounded_by_enumeration(self, nk16):
        trace = run_ea(RunConfig(workers=16, time_limit=math.inf, max_evaluations=2000, seed=0,
                                 mutation=MutationParams(0.3, 0.5, 1)), nk16)
        assert trace.best_fitness >= nk16.enumerate_all().min()

    def test_asynchrony_reorders_completions(self, table_bounds):
        trace = run_ea(RunConfig(workers=16, time_limit=_hours(6), seed=0), SeparableProblem(table_bounds))
        order = {hash_key(x): i for i, x in enumerate(trace.dispatched)}
        dispatch_rank = [order[hash_key(r.candidate)] for r in trace.rows]
        assert any(a > b for a, b in zip(dispatch_rank, dispatch_rank[1:]))

    def test_worker_conservation(self, table_bounds):
        cfg = RunConfig(workers=10, time_limit=_hours(8), seed=1, crash_prob=0.1)
        seen_pending = []

        class Checked(SimulatedTransport):
            def receive(self, deadline=math.inf):
                seen_pending.append((self.pending, len(self.outstanding())))
                return super().receive(deadline)

        run_ea(cfg, SeparableProblem(table_bounds), Checked(cfg))
        assert seen_pending and all(p == cfg.lam and o == cfg.lam for p, o in seen_pending)

    def test_transport_failure_truncates(self, table_bounds):
        cfg = RunConfig(workers=4, time_limit=_hours(10))

        class Flaky(SimulatedTransport):
            calls = 0

            def receive(self, deadline=math.inf):
                Flaky.calls += 1
                if Flaky.calls > 5:
                    raise TransportError("link down")
                return super().receive(deadline)

        trace = run_ea(cfg, SeparableProblem(table_bounds), Flaky(cfg))
        assert trace.truncated and trace.n_evaluations == 5 and "link down" in trace.reason

    def test_wrong_worker_count(self, table_bounds):
        with pytest.raises(ConfigurationError):
            run_ea(RunConfig(workers=4), SeparableProblem(table_bounds), SimulatedTransport(RunConfig(workers=8)))

    def test_local_mode(self, table_bounds):
        cfg = RunConfig(workers=4, time_limit=60.0, max_evaluations=40, seed=0)
        trace = run_ea(cfg, SeparableProblem(table_bounds), LocalTransport(cfg))
        assert trace.n_evaluations == 40
        assert len({hash_key(x) for x in trace.dispatched}) == len(trace.dispatched)
        assert np.all(np.diff(trace.best_history()) <= 0)

    def test_local_mode_exception_is_crash(self, table_bounds):
        class Boom(SeparableProblem):
            def evaluate(self, x):
                if x[0] % 2:
                    raise RuntimeError("solver diverged")
                return super().evaluate(x)

        cfg = RunConfig(workers=3, time_limit=60.0, max_evaluations=30)
        trace = run_ea(cfg, Boom(table_bounds), LocalTransport(cfg))
        assert trace.n_crashes > 0
        assert all(r.fitness is None or r.candidate[0] % 2 == 0 for r in trace.rows)


class TestCrashes:
    def test_all_crash(self, table_bounds):
        trace = run_ea(RunConfig(workers=6, time_limit=_hours(5), crash_prob=1.0), SeparableProblem(table_bounds))
        assert trace.n_evaluations > 0
        assert trace.best_fitness is None and trace.best_x is None
        assert trace.n_best_updates == 0 and trace.n_crashes == trace.n_evaluations

    def test_crash_fraction(self, table_bounds):
        cfg = RunConfig(workers=32, time_limit=math.inf, max_evaluations=10_000, crash_prob=0.02, seed=3)
        trace = run_ea(cfg, SeparableProblem(table_bounds))
        frac = trace.n_crashes / trace.n_evaluations
        se = math.sqrt(0.02 * 0.98 / trace.n_evaluations)
        assert abs(frac - 0.02) < 3 * se

    def test_crash_before_first_success_keeps_sentinel(self, table_bounds):
        cfg = RunConfig(workers=3)
        master = Master(cfg, table_bounds)
        pop = master.initial_population()
        res = EvalResult(0, pop[0], None, 0.0, 10.0)
        msg = handle_crash(res, master)
        assert master.best_fitness is None and master.best_x is None
        assert msg.worker_id == 0 and msg.dispatch_time == 10.0
        assert pop[0] in master.seen and msg.candidate in master.seen
        master.accept(EvalResult(1, pop[1], 0.7, 0.0, 11.0))
        assert master.best_fitness == 0.7

    def test_handle_crash_rejects_success(self, table_bounds):
        master = Master(RunConfig(workers=3), table_bounds)
        with pytest.raises(ValueError):
            handle_crash(EvalResult(0, np.zeros(11, int), 1.0, 0.0, 1.0), master)

    def test_crashed_candidate_never_best(self, table_bounds):
        trace = run_ea(RunConfig(workers=8, time_limit=_hours(10), crash_prob=0.3, seed=5),
                       SeparableProblem(table_bounds))
        crashed = {hash_key(r.candidate) for r in trace.rows if r.fitness is None}
        assert hash_key(trace.best_x) not in crashed


class TestSyncBaseline:
    def test_constant_latency_counts_equal(self, table_bounds):
        cfg = RunConfig(workers=9, time_limit=_hours(10), latency=LatencyModel.constant(2426.0))
        a = run_ea(cfg, SeparableProblem(table_bounds))
        s = run_sync_baseline(cfg, SeparableProblem(table_bounds))
        assert a.n_evaluations == s.n_evaluations == 8 * int(_hours(10) // 2426)
        # arrivals follow dispatch order
        order = {hash_key(x): i for i, x in enumerate(a.dispatched)}
        ranks = [order[hash_key(r.candidate)] for r in a.rows]
        assert ranks == sorted(ranks)

    def test_async_dominates_with_variance(self, table_bounds):
        for seed in range(3):
            cfg = RunConfig(workers=16, time_limit=_hours(24), seed=seed)
            assert run_ea(cfg, SeparableProblem(table_bounds)).n_evaluations > \
                run_sync_baseline(cfg, SeparableProblem(table_bounds)).n_evaluations

    def test_permanently_crashed_worker(self, table_bounds):
        prob = SeparableProblem(table_bounds)
        base = RunConfig(workers=5, time_limit=_hours(24), seed=0)
        broken = RunConfig(workers=5, time_limit=_hours(24), seed=0, crash_workers=frozenset({2}))
        sync_ok, sync_bad = run_sync_baseline(base, prob), run_sync_baseline(broken, prob)
        async_bad = run_ea(broken, prob)
        # every sync round now lasts the maximal latency
        assert sync_bad.n_evaluations < sync_ok.n_evaluations
        assert async_bad.n_successful > sync_bad.n_successful
        assert all(r.fitness is None for r in async_bad.rows if r.worker_id == 2)


def test_trace_csv_columns(table_bounds):
    trace = run_ea(RunConfig(workers=3, max_evaluations=4, time_limit=math.inf, crash_prob=0.5, seed=1),
                   SeparableProblem(table_bounds))
    text = _csv(trace).splitlines()
    assert text[0] == "eval_index,virtual_time,fitness,best_fitness,is_best_update,worker_id"
    assert len(text) == 5
