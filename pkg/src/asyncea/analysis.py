"""Mutation-parameter grid experiments and feature/performance statistics."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from asyncea.engine import RunConfig, run_ea
from asyncea.landscape import features
from asyncea.problems import FitnessProblem
from asyncea.search_space import MutationParams

logger = logging.getLogger(__name__)

P_VALUES = (0.1, 0.2, 0.3, 0.4)
R_VALUES = (0.05, 0.1, 0.2, 0.5)


class DegenerateInputError(ValueError):
    pass


def config_hash(obj) -> str:
    """Short stable digest of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, default=_jsonable, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    if hasattr(o, "__dataclass_fields__"):
        return {k: getattr(o, k) for k in o.__dataclass_fields__}
    raise TypeError(f"cannot hash {type(o).__name__}")


_NORMALIZERS: dict = {}


def normalization_constant(problem: FitnessProblem) -> float:
    """Fitness of the problem's reference candidate (1.0 when it has none).

    Cached per problem configuration hash.
    """
    key = config_hash(problem.describe())
    if key not in _NORMALIZERS:
        ref = problem.reference_fitness()
        if ref is None or ref == 0:
            if ref == 0:
                logger.warning("reference fitness is 0; reporting raw fitness")
            ref = 1.0
        _NORMALIZERS[key] = float(ref)
    return _NORMALIZERS[key]


# ---------------------------------------------------------------------------
# statistics


def _pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInputError("zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def spearman(a, b) -> float:
    """Rank correlation: Pearson correlation of average-ranked data."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 3:
        raise ValueError("spearman needs two 1-D sequences of equal length >= 3")
    try:
        return _pearson(rankdata(a), rankdata(b))
    except DegenerateInputError:
        raise DegenerateInputError("zero rank variance") from None


@dataclass(frozen=True)
class RegressionReport:
    pearson: float
    spearman: float
    slope: float
    intercept: float
    r_squared: float
    n: int
    degenerate: bool = False
    label: str = ""


def pearson_and_fit(x, y, label: str = "") -> RegressionReport:
    """Pearson and Spearman coefficients plus the least-squares line ``y = a x + b``.

    A constant ``y`` yields ``pearson = 0`` with ``degenerate=True``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise ValueError("need two 1-D sequences of equal length >= 3")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise DegenerateInputError("x has zero variance")
    slope = float(dx @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    try:
        r = _pearson(x, y)
        rho = spearman(x, y)
        degenerate = False
    except DegenerateInputError:
        r, rho, degenerate = 0.0, 0.0, True
    return RegressionReport(r, rho, slope, intercept, r * r, int(x.size), degenerate, label)


# ---------------------------------------------------------------------------
# grid


@dataclass
class CellStats:
    p: float
    r: float
    best: list  # raw best fitness per repeat, None if the run failed
    normalized: list
    ranks: list = field(default_factory=list)

    @property
    def available(self) -> list:
        return [v for v in self.normalized if v is not None]

    @property
    def complete(self) -> bool:
        return all(v is not None for v in self.normalized)

    @property
    def mean(self) -> float:
        vals = self.available
        return float(np.mean(vals)) if vals else math.nan

    @property
    def std(self) -> float:
        vals = self.available
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    @property
    def mean_rank(self) -> float:
        vals = [v for v in self.ranks if v is not None]
        return float(np.mean(vals)) if vals else math.nan


@dataclass
class GridResult:
    cells: dict  # (p, r) -> CellStats
    seeds: list
    normalizer: float
    config_hash: str = ""

    def settings(self) -> list:
        return list(self.cells)

    def cell(self, p, r) -> CellStats:
        return self.cells[(p, r)]

    @property
    def complete(self) -> bool:
        return all(c.complete for c in self.cells.values())

    def rows(self):
        for (p, r), c in self.cells.items():
            for k, seed in enumerate(self.seeds):
                yield p, r, k, seed, c.best[k], c.normalized[k], c.ranks[k]

    def to_csv(self, path, header_comments=()):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_comments:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "r", "repeat", "seed", "best_fitness", "normalized_best", "rank"])
            for p, r, k, seed, best, norm, rank in self.rows():
                w.writerow([p, r, k, seed, _fmt(best), _fmt(norm), _fmt(rank)])

    def summary_table(self) -> str:
        lines = [f"{'p':>5} {'r':>5} {'mean':>10} {'std':>10} {'rank':>6} {'n':>3}"]
        for (p, r), c in sorted(self.cells.items(), key=lambda kv: kv[1].mean):
            lines.append(f"{p:>5} {r:>5} {c.mean:>10.4f} {c.std:>10.4f} {c.mean_rank:>6.2f} {len(c.available):>3}")
        return "\n".join(lines)


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


def run_grid(problem: FitnessProblem, p_values=P_VALUES, r_values=R_VALUES, repeats: int = 5,
             base_seed: int = 0, cfg: RunConfig | None = None) -> GridResult:
    """Run the EA for every ``(p, r)`` and repeat.

    Repeat ``k`` of every cell uses seed ``base_seed + k`` for both the
    initial Sobol population and the mutation stream (paired design). Within
    each repeat the settings are ranked by best fitness, rank 1 being the
    lowest, ties sharing the average rank.
    """
    if not p_values or not r_values:
        raise ValueError("p_values and r_values must be non-empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    cfg = cfg or RunConfig()
    norm = normalization_constant(problem)
    seeds = [base_seed + k for k in range(repeats)]
    cells = {}
    for p in p_values:
        for r in r_values:
            best, normalized = [], []
            for seed in seeds:
                run_cfg = replace(cfg, mutation=replace(cfg.mutation, p=p, r=r), seed=seed, init_seed=seed)
                try:
                    trace = run_ea(run_cfg, problem)
                    f = trace.best_fitness
                except Exception:  # a failed run leaves the cell-repeat missing
                    logger.exception("run p=%s r=%s seed=%s failed", p, r, seed)
                    f = None
                best.append(f)
                normalized.append(None if f is None else f / norm)
            cells[(p, r)] = CellStats(p, r, best, normalized)
    _rank_within_repeats(cells, repeats)
    digest = config_hash({"problem": problem.describe(), "cfg": cfg, "p": list(p_values),
                          "r": list(r_values), "repeats": repeats, "base_seed": base_seed})
    return GridResult(cells, seeds, norm, digest)


def _rank_within_repeats(cells: dict, repeats: int):
    keys = list(cells)
    for c in cells.values():
        c.ranks = [None] * repeats
    for k in range(repeats):
        present = [key for key in keys if cells[key].normalized[k] is not None]
        if not present:
            continue
        ranks = rankdata([cells[key].normalized[k] for key in present])
        for key, rank in zip(present, ranks):
            cells[key].ranks[k] = float(rank)


# ---------------------------------------------------------------------------
# feature / performance study


@dataclass
class StudyResult:
    nr_report: RegressionReport | None
    tau_report: RegressionReport | None
    rows: list  # (p, r, nr, tau, mean_normalized_best)
    degenerate: bool
    config_hash: str = ""

    def to_csv(self, path, header_comments=()):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_comments:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "r", "nr", "tau", "mean_normalized_best"])
            for p, r, nr, tau, perf in self.rows:
                w.writerow([p, r, repr(float(nr)), "" if tau is None else repr(float(tau)), _fmt(perf)])


def _report_or_flag(x, y, label):
    try:
        return pearson_and_fit(x, y, label)
    except (DegenerateInputError, ValueError) as exc:
        logger.warning("%s study is degenerate: %s", label, exc)
        return None


def feature_performance_study(problem: FitnessProblem, grid: GridResult, length: int = 1024,
                              walk_seeds=(0,), mutation: MutationParams | None = None) -> StudyResult:
    """Landscape features per grid setting against mean normalized best fitness.

    Each setting gets one walk per entry of ``walk_seeds``; features are
    averaged over them. Returns one regression for the neutral rate and one
    for the autocorrelation length.
    """
    base = mutation or MutationParams()
    rows = []
    for (p, r), cell in grid.cells.items():
        m = replace(base, p=p, r=r)
        feats = [features(problem, m, length, s) for s in walk_seeds]
        nr = float(np.mean([f.nr for f in feats]))
        taus = [f.tau for f in feats if f.tau is not None]
        tau = float(np.mean(taus)) if taus else None
        rows.append((p, r, nr, tau, cell.mean))
    usable = [row for row in rows if row[3] is not None and not math.isnan(row[4])]
    perf = [row[4] for row in usable]
    nr_rep = _report_or_flag([row[2] for row in usable], perf, "nr")
    tau_rep = _report_or_flag([row[3] for row in usable], perf, "tau")
    degenerate = nr_rep is None or tau_rep is None or nr_rep.degenerate or tau_rep.degenerate
    digest = config_hash({"grid": grid.config_hash, "length": length, "walk_seeds": list(walk_seeds)})
    return StudyResult(nr_rep, tau_rep, rows, degenerate, digest)
