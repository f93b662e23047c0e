"""scikit-learn style wrappers around the optimizer and the landscape probe.

Both estimators take a fitness problem where scikit-learn would take ``X``,
so they support ``get_params``/``set_params``, ``clone`` and parameter grids.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from asyncea.analysis import normalization_constant
from asyncea.engine import LatencyModel, LocalTransport, RunConfig, run_ea, run_sync_baseline
from asyncea.landscape import features_from_walk, random_walk
from asyncea.validation import check_mutation, check_problem


class AsyncEA(BaseEstimator):
    """Asynchronous master-worker (1+lambda)-EA.

    Parameters
    ----------
    workers : int
        Computing units including the master; ``workers - 1`` evaluations run
        concurrently.
    virtual_hours : float
        Time budget, virtual hours in simulated mode and wall hours in local mode.
    max_evaluations : int or None
        Optional cap on received evaluations.
    p, r, min_delta
        Mutation rate, range width and minimum half-width.
    seed : int
        Seeds the mutation and latency streams; also picks the Sobol block
        unless ``init_seed`` is given.
    crash_prob : float
        Probability that a simulated evaluation crashes.
    latency : LatencyModel or None
        Simulated latency model; defaults to the 1629/2426/6169 s model.
    mode : {"simulated", "local"}
    synchronous : bool
        Run the round-based baseline instead of the asynchronous loop.

    Attributes
    ----------
    best_x_, best_fitness_, trace_, n_evaluations_, normalized_best_
    """

    def __init__(self, workers=64, virtual_hours=24.0, max_evaluations=None, p=0.1, r=0.05,
                 min_delta=0, seed=0, init_seed=None, crash_prob=0.0, latency=None,
                 mode="simulated", synchronous=False):
        self.workers = workers
        self.virtual_hours = virtual_hours
        self.max_evaluations = max_evaluations
        self.p = p
        self.r = r
        self.min_delta = min_delta
        self.seed = seed
        self.init_seed = init_seed
        self.crash_prob = crash_prob
        self.latency = latency
        self.mode = mode
        self.synchronous = synchronous

    def _run_config(self) -> RunConfig:
        hours = self.virtual_hours
        return RunConfig(
            workers=self.workers,
            time_limit=math.inf if hours is None else float(hours) * 3600.0,
            mutation=check_mutation(self.p, self.r, self.min_delta),
            seed=self.seed,
            init_seed=self.init_seed,
            latency=self.latency or LatencyModel(),
            crash_prob=self.crash_prob,
            max_evaluations=self.max_evaluations,
        )

    def fit(self, X, y=None):
        """Optimize the fitness problem ``X``."""
        problem = check_problem(X)
        if self.mode not in ("simulated", "local"):
            raise ValueError(f"mode must be 'simulated' or 'local', got {self.mode!r}")
        cfg = self._run_config()
        transport = LocalTransport(cfg) if self.mode == "local" else None
        runner = run_sync_baseline if self.synchronous else run_ea
        trace = runner(cfg, problem, transport)
        self.trace_ = trace
        self.best_x_ = trace.best_x
        self.best_fitness_ = trace.best_fitness
        self.n_evaluations_ = trace.n_evaluations
        if trace.best_fitness is None:
            self.normalized_best_ = None
        else:
            self.normalized_best_ = trace.best_fitness / normalization_constant(problem)
        return self

    def score(self, X=None, y=None):
        """Negative normalized best fitness (higher is better)."""
        check_is_fitted(self, "trace_")
        return -math.inf if self.normalized_best_ is None else -self.normalized_best_


class LandscapeFeatureEstimator(TransformerMixin, BaseEstimator):
    """Random-walk landscape features for one mutation setting.

    ``fit(problem)`` runs one walk and stores ``rho_``, ``tau_``,
    ``tau_saturated_``, ``nr_`` and ``epsilon_``. ``transform(problems)``
    returns an ``(n_problems, 2)`` array of ``[nr, tau]`` (``tau`` is NaN on a
    degenerate walk).
    """

    def __init__(self, p=0.1, r=0.05, min_delta=0, length=1024, seed=0, epsilon=None,
                 k_max=None, distinct="consecutive"):
        self.p = p
        self.r = r
        self.min_delta = min_delta
        self.length = length
        self.seed = seed
        self.epsilon = epsilon
        self.k_max = k_max
        self.distinct = distinct

    def _features(self, problem):
        m = check_mutation(self.p, self.r, self.min_delta)
        walk = random_walk(check_problem(problem), m, self.length, self.seed, distinct=self.distinct)
        return walk, features_from_walk(walk, self.epsilon, self.k_max)

    def fit(self, X, y=None):
        walk, feats = self._features(X)
        self.walk_ = walk
        self.features_ = feats
        self.rho_ = feats.rho
        self.tau_ = feats.tau
        self.tau_saturated_ = feats.tau_saturated
        self.nr_ = feats.nr
        self.epsilon_ = feats.epsilon
        return self

    def transform(self, X):
        check_is_fitted(self, "features_")
        problems = X if isinstance(X, (list, tuple)) else [X]
        out = np.empty((len(problems), 2))
        for i, prob in enumerate(problems):
            _, f = self._features(prob)
            out[i] = (f.nr, np.nan if f.tau is None else f.tau)
        return out
