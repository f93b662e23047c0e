"""Random-walk fitness landscape features: autocorrelation and neutrality."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from asyncea.engine import RETRY_CAP
from asyncea.problems import FitnessProblem
from asyncea.search_space import MutationParams, hash_key, mutate_many
from asyncea.validation import check_fitness_sequence, check_problem


class DegenerateWalkError(ValueError):
    """The walk's fitness has zero variance; autocorrelation is undefined."""


class RetrySaturationError(RuntimeError):
    pass


@dataclass
class WalkTrace:
    candidates: np.ndarray  # (length, n)
    fitness: np.ndarray
    mutation: MutationParams
    seed: int

    def __len__(self):
        return len(self.fitness)

    def to_csv(self, path, header_comments=()):
        n = self.candidates.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_comments:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "fitness"] + [f"x{j}" for j in range(n)])
            for t, (x, f) in enumerate(zip(self.candidates, self.fitness)):
                w.writerow([t, repr(float(f))] + [int(v) for v in x])


@dataclass
class LandscapeFeatures:
    rho: np.ndarray
    tau: int | None
    tau_saturated: bool
    nr: float
    epsilon: float
    length: int
    mutation: MutationParams | None = None
    degenerate: bool = False

    CSV_HEADER = ("p", "r", "length", "epsilon", "tau", "tau_saturated", "nr")

    def csv_row(self) -> list:
        m = self.mutation
        return [
            "" if m is None else m.p,
            "" if m is None else m.r,
            self.length,
            repr(self.epsilon),
            "" if self.tau is None else self.tau,
            int(self.tau_saturated),
            repr(float(self.nr)),
        ]


def random_walk(
    problem: FitnessProblem,
    mutation: MutationParams,
    length: int = 1024,
    seed: int = 0,
    distinct: str = "consecutive",
    retry_cap: int = RETRY_CAP,
) -> WalkTrace:
    """Walk of ``length`` solutions from a uniformly random start.

    Each step mutates the current solution, retrying until the child differs
    from its predecessor (``distinct="consecutive"``) or from every solution
    already on the walk (``distinct="global"``).
    """
    if length < 2:
        raise ValueError("a walk needs length >= 2")
    if distinct not in ("consecutive", "global"):
        raise ValueError(f"unknown distinct mode {distinct!r}")
    b = check_problem(problem).bounds
    rng = np.random.default_rng(seed)
    xs = np.empty((length, b.n), dtype=np.int64)
    fs = np.empty(length)
    xs[0] = rng.integers(b.lb, b.ub + 1)
    fs[0] = problem.evaluate(xs[0])
    visited = {hash_key(xs[0])}
    for t in range(1, length):
        prev = xs[t - 1]
        tries = 0
        while True:
            if tries >= retry_cap:
                raise RetrySaturationError(f"no admissible neighbour after {retry_cap} mutations at step {t}")
            child = mutate_many(prev, b, mutation, rng, 1)[0]
            tries += 1
            if distinct == "global":
                if hash_key(child) not in visited:
                    break
            elif not np.array_equal(child, prev):
                break
        xs[t] = child
        fs[t] = problem.evaluate(child)
        visited.add(hash_key(child))
    return WalkTrace(xs, fs, mutation, seed)


def _as_fitness(walk) -> np.ndarray:
    f = walk.fitness if isinstance(walk, WalkTrace) else walk
    return check_fitness_sequence(f)


def autocorrelation(walk, k_max: int | None = None, include_zero: bool = False) -> np.ndarray:
    """Estimated fitness autocorrelation for lags ``1..k_max``.

    ``rho(k) = sum_{t<l-k} (f_t - m)(f_{t+k} - m) / sum_t (f_t - m)^2`` with
    ``m`` the walk mean. The denominator runs over the whole walk.
    """
    f = _as_fitness(walk)
    n = f.size
    if k_max is None:
        k_max = max(n // 4, 1)
    if not 1 <= k_max < n:
        raise ValueError(f"need 1 <= k_max < walk length, got k_max={k_max}, length={n}")
    d = f - f.mean()
    denom = float(d @ d)
    if denom == 0.0:
        raise DegenerateWalkError("fitness is constant along the walk")
    lags = range(0 if include_zero else 1, k_max + 1)
    return np.array([(d[: n - k] @ d[k:]) / denom for k in lags])


def autocorrelation_length(rho, epsilon: float) -> tuple[int, bool]:
    """First lag (1-based) with ``|rho| < epsilon``; ``(k_max, True)`` if none."""
    rho = np.asarray(rho, dtype=float)
    if rho.size == 0:
        raise ValueError("rho is empty")
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    below = np.flatnonzero(np.abs(rho) < epsilon)
    if below.size:
        return int(below[0]) + 1, False
    return int(rho.size), True


def default_epsilon(length: int) -> float:
    return 4.0 / math.sqrt(length)


def neutral_rate(walk) -> float:
    """Fraction of consecutive pairs with exactly equal fitness."""
    f = _as_fitness(walk)
    if f.size < 2:
        raise ValueError("neutral rate needs at least two points")
    return float(np.count_nonzero(f[1:] == f[:-1]) / (f.size - 1))


def features_from_walk(walk: WalkTrace, epsilon: float | None = None, k_max: int | None = None) -> LandscapeFeatures:
    n = len(walk)
    eps = default_epsilon(n) if epsilon is None else float(epsilon)
    nr = neutral_rate(walk)
    km = k_max if k_max is not None else max(n // 4, 1)
    km = min(km, n - 1)
    try:
        rho = autocorrelation(walk, km)
    except DegenerateWalkError:
        return LandscapeFeatures(np.array([]), None, False, 1.0, eps, n, walk.mutation, degenerate=True)
    tau, sat = autocorrelation_length(rho, eps)
    return LandscapeFeatures(rho, tau, sat, nr, eps, n, walk.mutation)


def features(problem, mutation: MutationParams, length: int = 1024, seed: int = 0,
             epsilon: float | None = None, k_max: int | None = None,
             distinct: str = "consecutive") -> LandscapeFeatures:
    """One random walk and both features; ``epsilon`` defaults to ``4/sqrt(length)``."""
    walk = random_walk(problem, mutation, length, seed, distinct=distinct)
    return features_from_walk(walk, epsilon, k_max)
