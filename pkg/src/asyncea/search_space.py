"""Bounded integer search space, mutation operator, Sobol design and hashing."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from asyncea._toml import load_toml

logger = logging.getLogger(__name__)

# scipy's unscrambled Sobol generator supports 2**30 points per dimension.
SOBOL_MAX_POINTS = 2**30


class ConfigurationError(ValueError):
    """Raised on inconsistent bounds, parameters or configuration files."""


@dataclass(frozen=True, eq=False)
class BoundsSpec:
    """Per-variable integer bounds and a reference configuration.

    ``exempt`` lists coordinates whose reference value may fall outside
    ``[lb, ub]`` (the value is recorded in physical units rather than in the
    search encoding). Search never uses the reference for those coordinates.
    """

    lb: np.ndarray
    ub: np.ndarray
    reference: np.ndarray | None = None
    names: tuple[str, ...] = ()
    exempt: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        lb = np.asarray(self.lb, dtype=np.int64).ravel()
        ub = np.asarray(self.ub, dtype=np.int64).ravel()
        if lb.size == 0 or lb.shape != ub.shape:
            raise ConfigurationError("lb and ub must be non-empty and of equal length")
        if np.any(lb > ub):
            bad = np.flatnonzero(lb > ub).tolist()
            raise ConfigurationError(f"lb > ub for coordinates {bad}")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        object.__setattr__(self, "exempt", frozenset(int(j) for j in self.exempt))
        if self.reference is not None:
            ref = np.asarray(self.reference, dtype=np.int64).ravel()
            if ref.shape != lb.shape:
                raise ConfigurationError("reference has the wrong dimension")
            out = (ref < lb) | (ref > ub)
            bad = [j for j in np.flatnonzero(out) if j not in self.exempt]
            if bad:
                raise ConfigurationError(f"reference out of bounds at non-exempt coordinates {bad}")
            object.__setattr__(self, "reference", ref)
        if self.names and len(self.names) != lb.size:
            raise ConfigurationError("names has the wrong length")
        object.__setattr__(self, "names", tuple(self.names))

    def __eq__(self, other):
        if not isinstance(other, BoundsSpec):
            return NotImplemented
        same_ref = (self.reference is None and other.reference is None) or (
            self.reference is not None and other.reference is not None
            and np.array_equal(self.reference, other.reference)
        )
        return (np.array_equal(self.lb, other.lb) and np.array_equal(self.ub, other.ub) and same_ref
                and self.names == other.names and self.exempt == other.exempt)

    def __hash__(self):
        return hash((self.lb.tobytes(), self.ub.tobytes(), self.names, self.exempt))

    @property
    def n(self) -> int:
        return int(self.lb.size)

    @property
    def width(self) -> np.ndarray:
        return self.ub - self.lb

    def size(self) -> int:
        """Number of points in the box."""
        return int(np.prod([int(w) + 1 for w in self.width], dtype=object))

    @classmethod
    def from_dict(cls, d: dict) -> "BoundsSpec":
        try:
            return cls(
                lb=d["lb"],
                ub=d["ub"],
                reference=d.get("reference"),
                names=tuple(d.get("names", ())),
                exempt=frozenset(d.get("exempt", ())),
            )
        except KeyError as exc:
            raise ConfigurationError(f"bounds config is missing key {exc}") from None

    @classmethod
    def from_file(cls, path) -> "BoundsSpec":
        data = load_toml(path)
        return cls.from_dict(data.get("problem", data))


def nroo_bounds() -> BoundsSpec:
    """The 11-variable control-rod instance bundled with the package."""
    ref = resources.files("asyncea") / "data" / "nroo.toml"
    with resources.as_file(ref) as path:
        return BoundsSpec.from_file(Path(path))


@dataclass(frozen=True)
class MutationParams:
    """Mutation rate ``p`` (per-variable Bernoulli) and range width ``r``.

    ``min_delta`` raises every half-width to at least this value. The default
    of 0 keeps ``floor(r * (ub - lb))`` as is; binary variables need
    ``min_delta=1`` since ``floor(r * 1) == 0`` for ``r <= 0.5``.
    """

    p: float = 0.1
    r: float = 0.05
    min_delta: int = 0

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ConfigurationError(f"mutation rate p must lie in (0, 1], got {self.p}")
        if not 0.0 < self.r <= 0.5:
            raise ConfigurationError(f"mutation range r must lie in (0, 0.5], got {self.r}")
        if self.min_delta < 0:
            raise ConfigurationError("min_delta must be >= 0")

    def deltas(self, bounds: BoundsSpec) -> np.ndarray:
        """Half-widths ``floor(r * (ub - lb))`` of the redraw intervals.

        ``min_delta`` never widens a coordinate beyond its own range.
        """
        d = np.maximum(np.floor(self.r * bounds.width).astype(np.int64), self.min_delta)
        return np.minimum(d, bounds.width)


def _check_dim(x, bounds: BoundsSpec) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or x.size != bounds.n:
        raise ValueError(f"candidate has shape {x.shape}, expected ({bounds.n},)")
    return x


def validate(x, bounds: BoundsSpec) -> bool:
    """True iff every coordinate of ``x`` lies within its inclusive bounds."""
    x = _check_dim(x, bounds)
    return bool(np.all((x >= bounds.lb) & (x <= bounds.ub)))


def mutate(x, bounds: BoundsSpec, params: MutationParams, rng: np.random.Generator) -> np.ndarray:
    """Return a mutated copy of ``x``.

    Each coordinate is selected with probability ``params.p``. A selected
    coordinate is redrawn uniformly from
    ``[x_j - d_j, x_j + d_j] ∩ [lb_j, ub_j] \\ {x_j}`` with
    ``d_j = floor(r * (ub_j - lb_j))``. Coordinates with ``d_j == 0`` stay put.
    The result may equal ``x`` when nothing was selected.
    """
    return mutate_many(x, bounds, params, rng, 1)[0]


def mutate_many(x, bounds: BoundsSpec, params: MutationParams, rng: np.random.Generator,
                size: int) -> np.ndarray:
    """``size`` independent mutants of ``x``, one per row."""
    x = _check_dim(x, bounds).astype(np.int64)
    if not validate(x, bounds):
        raise ValueError("cannot mutate an out-of-bounds candidate")
    delta = params.deltas(bounds)
    selected = rng.random((size, bounds.n)) < params.p
    if logger.isEnabledFor(logging.DEBUG):
        for j in np.flatnonzero(selected.any(axis=0) & (delta == 0)):
            logger.debug("degenerate mutation range on coordinate %d", j)
    selected &= delta > 0
    lo = np.maximum(x - delta, bounds.lb)
    hi = np.minimum(x + delta, bounds.ub)
    # uniform over the hi - lo admissible values, skipping over x_j
    v = lo + np.floor(rng.random((size, bounds.n)) * (hi - lo)).astype(np.int64)
    v += v >= x
    return np.where(selected, v, x)


def sobol_init(bounds: BoundsSpec, count: int, seed: int = 0) -> np.ndarray:
    """Quasi-random integer design of ``count`` candidates, one per row.

    Uses scipy's unscrambled Sobol generator (Joe & Kuo ``new-joe-kuo-6.21201``
    direction numbers). The all-zeros first point is skipped, and ``seed``
    selects a disjoint block of the sequence: points
    ``1 + seed*count .. seed*count + count``.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    if seed < 0:
        raise ConfigurationError("seed must be >= 0")
    return sobol_block(bounds, 1 + seed * count, count)


def sobol_block(bounds: BoundsSpec, start: int, count: int) -> np.ndarray:
    """Sobol points ``start .. start+count-1`` mapped onto the integer box."""
    if start + count > SOBOL_MAX_POINTS:
        raise ConfigurationError(
            f"Sobol sequence supports {SOBOL_MAX_POINTS} points, requested up to {start + count}"
        )
    engine = qmc.Sobol(d=bounds.n, scramble=False)
    if start:
        engine.fast_forward(start)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two draws are fine here
        u = engine.random(count)
    span = (bounds.width + 1).astype(np.float64)
    x = bounds.lb + np.floor(u * span).astype(np.int64)
    return np.minimum(x, bounds.ub)


def hash_key(x) -> bytes:
    """Canonical key of an integer vector: its little-endian int64 bytes."""
    return np.ascontiguousarray(x, dtype="<i8").tobytes()


def format_candidate(x) -> str:
    return ",".join(str(int(v)) for v in x)


def parse_candidate(line: str) -> np.ndarray:
    return np.array([int(v) for v in line.strip().split(",")], dtype=np.int64)
