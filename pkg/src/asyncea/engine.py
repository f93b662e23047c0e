"""Asynchronous master-worker (1+lambda)-EA and its worker transports.

The master owns the best-so-far solution and the set of already dispatched
candidates. Transports deliver one result at a time:

* :class:`SimulatedTransport` is a discrete-event worker farm in virtual
  seconds (heterogeneous latencies, crashes, deterministic per seed);
* :class:`LocalTransport` evaluates on a local thread or process pool in wall
  seconds.
"""

from __future__ import annotations

import csv
import heapq
import logging
import math
import time
from concurrent.futures import FIRST_COMPLETED, Executor, ProcessPoolExecutor, ThreadPoolExecutor, wait
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from asyncea.problems import FitnessProblem
from asyncea.search_space import (
    BoundsSpec,
    ConfigurationError,
    MutationParams,
    hash_key,
    mutate_many,
    sobol_block,
    validate,
)

logger = logging.getLogger(__name__)

RETRY_CAP = 10_000


class TransportError(RuntimeError):
    """A transport could not deliver a result."""


class SearchSpaceExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    """Evaluation latency: ``min + LogNormal(mu, sigma)`` clamped to ``max``.

    Only ``min``, ``mean`` and ``max`` are given. ``mu`` is pinned so that an
    unclamped draw exceeds ``max`` with probability ``tail_prob``; ``sigma`` is
    then solved so that the *clamped* mean equals ``mean``. With the defaults
    (1629 / 2426 / 6169 s, tail 1e-3) this gives sigma ~= 0.626 and
    mu ~= 6.486. ``kind="constant"`` always returns ``mean``.
    """

    min: float = 1629.0
    mean: float = 2426.0
    max: float = 6169.0
    tail_prob: float = 1e-3
    kind: str = "lognormal"

    def __post_init__(self):
        if self.kind not in ("lognormal", "constant"):
            raise ConfigurationError(f"unknown latency kind {self.kind!r}")
        if self.kind == "lognormal" and not self.min < self.mean < self.max:
            raise ConfigurationError("latency model needs min < mean < max")
        if self.kind == "constant" and self.mean <= 0:
            raise ConfigurationError("constant latency must be > 0")
        if not 0 < self.tail_prob < 0.5:
            raise ConfigurationError("tail_prob must lie in (0, 0.5)")

    @classmethod
    def constant(cls, value: float = 2426.0) -> "LatencyModel":
        return cls(min=value, mean=value, max=value, kind="constant")

    def params(self) -> tuple[float, float]:
        """Fitted ``(mu, sigma)`` of the lognormal part."""
        return _fit_lognormal(self.min, self.mean, self.max, self.tail_prob)

    def clamped_mean(self, mu: float, sigma: float) -> float:
        return self.min + _clamped_lognormal_mean(mu, sigma, self.max - self.min)

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "constant":
            return self.mean if size is None else np.full(size, self.mean)
        mu, sigma = self.params()
        y = rng.lognormal(mu, sigma, size)
        return np.minimum(self.min + y, self.max)


def _clamped_lognormal_mean(mu, sigma, c):
    # E[min(Y, c)] for Y ~ LogNormal(mu, sigma)
    z = (math.log(c) - mu) / sigma
    below = math.exp(mu + sigma**2 / 2) * stats.norm.cdf(z - sigma)
    return below + c * stats.norm.sf(z)


_FIT_CACHE: dict = {}


def _fit_lognormal(lo, mean, hi, tail):
    key = (lo, mean, hi, tail)
    if key not in _FIT_CACHE:
        c = hi - lo
        zq = stats.norm.isf(tail)

        def gap(sigma):
            mu = math.log(c) - zq * sigma
            return _clamped_lognormal_mean(mu, sigma, c) - (mean - lo)

        # the clamped mean rises from ~0 to ~c as sigma goes from 0 up to zq
        sigma = optimize.brentq(gap, 1e-6, zq - 1e-6, xtol=1e-12)
        _FIT_CACHE[key] = (math.log(c) - zq * sigma, sigma)
    return _FIT_CACHE[key]


@dataclass(frozen=True)
class RunConfig:
    """Settings of one optimization run.

    ``workers`` counts every computing unit including the master, so the
    run keeps ``workers - 1`` evaluations in flight.
    """

    workers: int = 64
    time_limit: float = 24 * 3600.0
    mutation: MutationParams = field(default_factory=MutationParams)
    seed: int = 0
    init_seed: int | None = None
    latency: LatencyModel = field(default_factory=LatencyModel)
    crash_prob: float = 0.0
    crash_workers: frozenset = frozenset()
    max_evaluations: int | None = None
    retry_cap: int = RETRY_CAP
    problem: str = ""
    target: float | None = None  # stop once f* <= target

    def __post_init__(self):
        if self.workers < 2:
            raise ConfigurationError("workers must be >= 2 (one master, at least one worker)")
        if not self.time_limit > 0:
            raise ConfigurationError("time_limit must be > 0")
        if not 0.0 <= self.crash_prob <= 1.0:
            raise ConfigurationError("crash_prob must lie in [0, 1]")
        if self.max_evaluations is not None and self.max_evaluations < 1:
            raise ConfigurationError("max_evaluations must be >= 1")
        if self.retry_cap < 1:
            raise ConfigurationError("retry_cap must be >= 1")

    @property
    def lam(self) -> int:
        return self.workers - 1

    @property
    def initial_seed(self) -> int:
        return self.seed if self.init_seed is None else self.init_seed


@dataclass(frozen=True)
class EvalMessage:
    worker_id: int
    candidate: np.ndarray
    dispatch_time: float


@dataclass(frozen=True)
class EvalResult:
    worker_id: int
    candidate: np.ndarray
    fitness: float | None
    dispatch_time: float
    completion_time: float

    @property
    def crashed(self) -> bool:
        return self.fitness is None


@dataclass
class TraceRow:
    eval_index: int
    time: float
    worker_id: int
    candidate: np.ndarray
    fitness: float | None
    best_fitness: float | None
    is_best_update: bool
    is_strict_improvement: bool


@dataclass
class RunTrace:
    rows: list = field(default_factory=list)
    best_x: np.ndarray | None = None
    best_fitness: float | None = None
    dispatched: list = field(default_factory=list)
    n_crashes: int = 0
    n_saturations: int = 0
    truncated: bool = False
    reason: str = ""

    @property
    def n_evaluations(self) -> int:
        return len(self.rows)

    @property
    def n_successful(self) -> int:
        return self.n_evaluations - self.n_crashes

    @property
    def n_best_updates(self) -> int:
        return sum(r.is_best_update for r in self.rows)

    @property
    def n_strict_improvements(self) -> int:
        return sum(r.is_strict_improvement for r in self.rows)

    def best_history(self) -> np.ndarray:
        return np.array([np.nan if r.best_fitness is None else r.best_fitness for r in self.rows])

    def to_csv(self, path, header_comments=()):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_comments:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eval_index", "virtual_time", "fitness", "best_fitness", "is_best_update", "worker_id"])
            for r in self.rows:
                w.writerow([
                    r.eval_index,
                    repr(float(r.time)),
                    "" if r.fitness is None else repr(float(r.fitness)),
                    "" if r.best_fitness is None else repr(float(r.best_fitness)),
                    int(r.is_best_update),
                    r.worker_id,
                ])


# ---------------------------------------------------------------------------
# transports


class SimulatedTransport:
    """Discrete-event worker farm running in virtual seconds.

    Each dispatched evaluation completes at ``dispatch_time + L`` with ``L``
    drawn from ``cfg.latency``; with probability ``cfg.crash_prob`` (or always,
    for workers in ``cfg.crash_workers``) the outcome is a crash. Results are
    delivered in completion-time order, ties broken by ascending worker id.
    The fitness itself is computed lazily at delivery.
    """

    def __init__(self, cfg: RunConfig, problem: FitnessProblem | None = None):
        self.cfg = cfg
        self.n_workers = cfg.lam
        self.problem = problem
        # latency/crash stream is independent of the master's mutation stream
        self._rng = np.random.default_rng([cfg.seed, 0x5EED])
        self._heap: list = []
        self._busy: set = set()
        self._now = 0.0

    def bind(self, problem: FitnessProblem):
        self.problem = problem
        return self

    @property
    def now(self) -> float:
        return self._now

    @property
    def pending(self) -> int:
        return len(self._heap)

    def outstanding(self) -> frozenset:
        return frozenset(self._busy)

    def send(self, msg: EvalMessage) -> None:
        if not 0 <= msg.worker_id < self.n_workers:
            raise TransportError(f"no worker {msg.worker_id}")
        if msg.worker_id in self._busy:
            raise TransportError(f"worker {msg.worker_id} is busy")
        latency = float(self.cfg.latency.sample(self._rng))
        crash_draw = self._rng.random()
        if msg.worker_id in self.cfg.crash_workers:
            crashed, latency = True, self.cfg.latency.max
        else:
            crashed = crash_draw < self.cfg.crash_prob
        done = msg.dispatch_time + latency
        heapq.heappush(self._heap, (done, msg.worker_id, msg, crashed))
        self._busy.add(msg.worker_id)

    def receive(self, deadline: float = math.inf) -> EvalResult | None:
        """Pop the next completion, or None if nothing completes by ``deadline``."""
        if not self._heap or self._heap[0][0] > deadline:
            return None
        done, wid, msg, crashed = heapq.heappop(self._heap)
        self._busy.discard(wid)
        self._now = done
        fitness = None if crashed else float(self.problem.evaluate(msg.candidate))
        return EvalResult(wid, msg.candidate, fitness, msg.dispatch_time, done)

    def close(self):
        self._heap.clear()
        self._busy.clear()


def simulate_transport(cfg: RunConfig, problem: FitnessProblem | None = None) -> SimulatedTransport:
    return SimulatedTransport(cfg, problem)


def _evaluate(problem, x):
    return float(problem.evaluate(x))


class LocalTransport:
    """Evaluates candidates concurrently on a local executor, in wall seconds.

    An exception raised by the problem is reported as a crash.
    """

    def __init__(self, cfg: RunConfig, problem: FitnessProblem | None = None,
                 executor: Executor | None = None, processes: bool = False):
        self.cfg = cfg
        self.n_workers = cfg.lam
        self.problem = problem
        if executor is None:
            pool = ProcessPoolExecutor if processes else ThreadPoolExecutor
            executor = pool(max_workers=self.n_workers)
            self._owns = True
        else:
            self._owns = False
        self._executor = executor
        self._futures: dict = {}
        self._t0 = time.monotonic()

    def bind(self, problem):
        self.problem = problem
        return self

    @property
    def now(self) -> float:
        return time.monotonic() - self._t0

    @property
    def pending(self) -> int:
        return len(self._futures)

    def outstanding(self) -> frozenset:
        return frozenset(wid for wid, _ in self._futures.values())

    def send(self, msg: EvalMessage) -> None:
        if msg.worker_id in self.outstanding():
            raise TransportError(f"worker {msg.worker_id} is busy")
        fut = self._executor.submit(_evaluate, self.problem, msg.candidate)
        self._futures[fut] = (msg.worker_id, msg)

    def receive(self, deadline: float = math.inf) -> EvalResult | None:
        if not self._futures:
            return None
        timeout = None if math.isinf(deadline) else max(deadline - self.now, 0.0)
        done, _ = wait(list(self._futures), timeout=timeout, return_when=FIRST_COMPLETED)
        if not done:
            return None
        fut = min(done, key=lambda f: self._futures[f][0])
        wid, msg = self._futures.pop(fut)
        try:
            fitness = fut.result()
        except Exception as exc:  # the problem crashed on this candidate
            logger.warning("evaluation on worker %d crashed: %s", wid, exc)
            fitness = None
        return EvalResult(wid, msg.candidate, fitness, msg.dispatch_time, self.now)

    def close(self):
        for fut in self._futures:
            fut.cancel()
        self._futures.clear()
        if self._owns:
            self._executor.shutdown(wait=True, cancel_futures=True)


# ---------------------------------------------------------------------------
# master


class SeenIndex:
    """Set of dispatched candidates with a vectorized membership test.

    Boxes of at most ``BITMAP_LIMIT`` points are indexed by a mixed-radix
    code in a bitmap; larger ones by :func:`hash_key` in a set.
    """

    BITMAP_LIMIT = 2**26

    def __init__(self, bounds: BoundsSpec):
        self.bounds = bounds
        self._count = 0
        if bounds.size() <= self.BITMAP_LIMIT:
            radix = (bounds.width + 1).astype(np.int64)
            self._place = np.concatenate([[1], np.cumprod(radix[:-1])]).astype(np.int64)
            self._bitmap = np.zeros(bounds.size(), dtype=bool)
            self._keys = None
        else:
            self._bitmap = None
            self._keys: set = set()

    def __len__(self):
        return self._count

    def _codes(self, X):
        return (np.asarray(X, dtype=np.int64) - self.bounds.lb) @ self._place

    def __contains__(self, x) -> bool:
        return bool(self.contains_many(np.asarray(x)[None, :])[0])

    def contains_many(self, X) -> np.ndarray:
        if self._bitmap is not None:
            return self._bitmap[self._codes(X)]
        return np.array([hash_key(x) in self._keys for x in X], dtype=bool)

    def add(self, x) -> None:
        if self._bitmap is not None:
            code = int(self._codes(np.asarray(x)[None, :])[0])
            new = not self._bitmap[code]
            self._bitmap[code] = True
        else:
            key = hash_key(x)
            new = key not in self._keys
            self._keys.add(key)
        self._count += new


class Master:
    """State held by the master node: best-so-far, seen-set and Sobol cursor."""

    def __init__(self, cfg: RunConfig, bounds: BoundsSpec):
        self.cfg = cfg
        self.bounds = bounds
        self.rng = np.random.default_rng(cfg.seed)
        self.seen = SeenIndex(bounds)
        self.best_x: np.ndarray | None = None
        self.best_fitness: float | None = None  # sentinel: nothing accepted yet
        self._sobol_next = 1 + cfg.initial_seed * cfg.lam
        self._sobol_buf: list = []
        self.n_saturations = 0
        self.trace = RunTrace()

    def _next_sobol(self) -> np.ndarray:
        if not self._sobol_buf:
            block = sobol_block(self.bounds, self._sobol_next, 256)
            self._sobol_next += 256
            self._sobol_buf = list(block[::-1])
        return self._sobol_buf.pop()

    def fresh_point(self) -> np.ndarray:
        """Next Sobol point not yet dispatched."""
        for _ in range(self.cfg.retry_cap):
            x = self._next_sobol()
            if x not in self.seen:
                return x
        raise SearchSpaceExhausted("no unseen Sobol point within the retry cap")

    def initial_population(self) -> list:
        block = sobol_block(self.bounds, self._sobol_next, self.cfg.lam)
        self._sobol_next += self.cfg.lam
        pop = []
        for x in block:
            if x in self.seen:
                x = self.fresh_point()
            self.register(x)
            pop.append(x)
        return pop

    def register(self, x):
        self.seen.add(x)
        self.trace.dispatched.append(x)

    def offspring(self) -> np.ndarray:
        """Mutate the best solution until the child has never been dispatched."""
        if self.best_x is None:
            x = self.fresh_point()
        else:
            x = self._unseen_mutant()
            if x is None:
                self.n_saturations += 1
                logger.info("mutation retry cap reached; dispatching a fresh Sobol point")
                x = self.fresh_point()
        self.register(x)
        return x

    def _unseen_mutant(self):
        tries = 0
        batch = 8
        while tries < self.cfg.retry_cap:
            size = min(batch, self.cfg.retry_cap - tries)
            kids = mutate_many(self.best_x, self.bounds, self.cfg.mutation, self.rng, size)
            fresh = np.flatnonzero(~self.seen.contains_many(kids))
            if fresh.size:
                return kids[fresh[0]]
            tries += size
            batch = min(batch * 4, 4096)
        return None

    def accept(self, res: EvalResult) -> TraceRow:
        """Selection step. Equal fitness replaces the best (plateau drift)."""
        update = strict = False
        if res.crashed:
            self.trace.n_crashes += 1
        elif self.best_fitness is None or res.fitness <= self.best_fitness:
            strict = self.best_fitness is None or res.fitness < self.best_fitness
            self.best_x, self.best_fitness = res.candidate, res.fitness
            update = True
        row = TraceRow(
            eval_index=len(self.trace.rows),
            time=res.completion_time,
            worker_id=res.worker_id,
            candidate=res.candidate,
            fitness=res.fitness,
            best_fitness=self.best_fitness,
            is_best_update=update,
            is_strict_improvement=strict,
        )
        self.trace.rows.append(row)
        return row

    def budget_left(self) -> bool:
        cfg = self.cfg
        if cfg.target is not None and self.best_fitness is not None and self.best_fitness <= cfg.target:
            return False
        return cfg.max_evaluations is None or len(self.trace.rows) < cfg.max_evaluations

    def finish(self, truncated=False, reason="") -> RunTrace:
        t = self.trace
        t.best_x, t.best_fitness = self.best_x, self.best_fitness
        t.n_saturations = self.n_saturations
        t.truncated, t.reason = truncated, reason
        return t


def handle_crash(result: EvalResult, master: Master, now: float | None = None) -> EvalMessage:
    """Record a crashed evaluation and give its worker a fresh mutant of the best.

    The candidate stays in the seen-set and never becomes the best solution.
    """
    if not result.crashed:
        raise ValueError("handle_crash expects a crashed result")
    master.accept(result)
    t = result.completion_time if now is None else now
    return EvalMessage(result.worker_id, master.offspring(), t)


def _check(cfg: RunConfig, problem: FitnessProblem, transport):
    if transport.n_workers != cfg.lam:
        raise ConfigurationError(f"transport has {transport.n_workers} workers, expected {cfg.lam}")
    if problem.bounds.n < 1:
        raise ConfigurationError("empty search space")


def run_ea(cfg: RunConfig, problem: FitnessProblem, transport=None) -> RunTrace:
    """Asynchronous master-worker (1+lambda)-EA.

    Every worker gets one Sobol point; then each received result updates the
    best solution (``f <= f*`` replaces it) and the same worker is sent a new
    never-seen mutant of the best. Stops at the time limit, at
    ``cfg.max_evaluations`` received results, once ``f* <= cfg.target``, or
    when no result is pending.
    """
    transport = SimulatedTransport(cfg, problem) if transport is None else transport.bind(problem)
    _check(cfg, problem, transport)
    master = Master(cfg, problem.bounds)
    try:
        for wid, x in enumerate(master.initial_population()):
            transport.send(EvalMessage(wid, x, transport.now))
        while master.budget_left():
            res = transport.receive(deadline=cfg.time_limit)
            if res is None:
                break
            if res.crashed:
                msg = handle_crash(res, master, transport.now)
            else:
                master.accept(res)
                msg = EvalMessage(res.worker_id, master.offspring(), transport.now)
            transport.send(msg)
    except (TransportError, SearchSpaceExhausted) as exc:
        logger.warning("run stopped early: %s", exc)
        return master.finish(truncated=True, reason=str(exc))
    finally:
        transport.close()
    return master.finish()


def run_sync_baseline(cfg: RunConfig, problem: FitnessProblem, transport=None) -> RunTrace:
    """Round-based master-worker baseline.

    The master waits for all ``workers - 1`` results of a round, applies the
    same selection to them in arrival order, then dispatches a full new round
    of never-seen mutants.
    """
    transport = SimulatedTransport(cfg, problem) if transport is None else transport.bind(problem)
    _check(cfg, problem, transport)
    master = Master(cfg, problem.bounds)
    try:
        batch = master.initial_population()
        while True:
            for wid, x in enumerate(batch):
                transport.send(EvalMessage(wid, x, transport.now))
            received = 0
            while received < cfg.lam and master.budget_left():
                res = transport.receive(deadline=cfg.time_limit)
                if res is None:
                    break
                master.accept(res)
                received += 1
            if received < cfg.lam:
                break
            batch = [master.offspring() for _ in range(cfg.lam)]
    except (TransportError, SearchSpaceExhausted) as exc:
        logger.warning("run stopped early: %s", exc)
        return master.finish(truncated=True, reason=str(exc))
    finally:
        transport.close()
    return master.finish()
