"""Fitness problems: the load-following surrogate, NK landscapes and helpers.

All problems are minimized and deterministic. A problem exposes ``bounds``,
``evaluate(x)`` and ``nominal_cost`` (expected cost of one evaluation in
virtual seconds, used by the simulated worker farm).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numba
import numpy as np

from asyncea.search_space import BoundsSpec, ConfigurationError, nroo_bounds, validate

# mean evaluation time reported for the reactor simulator
DEFAULT_COST = 2426.0


class MalformedTrajectoryError(ValueError):
    pass


class FitnessProblem:
    """Base class for minimized fitness functions over a :class:`BoundsSpec`."""

    name = "problem"
    nominal_cost = DEFAULT_COST

    def __init__(self, bounds: BoundsSpec):
        self.bounds = bounds

    @property
    def n(self) -> int:
        return self.bounds.n

    def evaluate(self, x) -> float:
        raise NotImplementedError

    def __call__(self, x) -> float:
        return self.evaluate(x)

    def reference_candidate(self) -> np.ndarray | None:
        """Candidate used to normalize fitness values, if the problem has one."""
        return None

    def reference_fitness(self) -> float | None:
        ref = self.reference_candidate()
        return None if ref is None else self.evaluate(ref)

    def describe(self) -> dict:
        return {"name": self.name, "n": self.n}


class ConstantProblem(FitnessProblem):
    """Every candidate has the same fitness."""

    name = "constant"

    def __init__(self, bounds: BoundsSpec, value: float = 1.0):
        super().__init__(bounds)
        self.value = float(value)

    def evaluate(self, x) -> float:
        return self.value

    def describe(self):
        return {"name": self.name, "n": self.n, "value": self.value}


class SeparableProblem(FitnessProblem):
    """Normalized L1 distance to a target point; the optimum is the target."""

    name = "separable"

    def __init__(self, bounds: BoundsSpec, target=None):
        super().__init__(bounds)
        if target is None:
            target = (bounds.lb + bounds.ub) // 2
        self.target = np.asarray(target, dtype=np.int64)
        if not validate(self.target, bounds):
            raise ConfigurationError("separable target must lie within bounds")
        self._scale = np.where(bounds.width > 0, bounds.width, 1).astype(float)

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=np.int64)
        return float(np.sum(np.abs(x - self.target) / self._scale))

    def describe(self):
        return {"name": self.name, "n": self.n, "target": self.target.tolist()}


class NKLandscape(FitnessProblem):
    """Kauffman NK landscape on N bits with random epistatic links.

    Fitness is the mean of the N contribution values, each read from a table
    indexed by the bit itself followed by its K links (most significant bit
    first).
    """

    name = "nk"
    nominal_cost = DEFAULT_COST

    def __init__(self, N: int, K: int, seed: int = 0, tables=None, links=None):
        if not (1 <= K < N <= 24):
            raise ConfigurationError(f"NK requires 1 <= K < N <= 24, got N={N}, K={K}")
        super().__init__(BoundsSpec(lb=np.zeros(N, int), ub=np.ones(N, int)))
        self.N, self.K, self.seed = N, K, seed
        rng = np.random.default_rng(seed)
        if links is None:
            links = np.array(
                [rng.choice(np.delete(np.arange(N), i), size=K, replace=False) for i in range(N)]
            )
        if tables is None:
            tables = rng.random((N, 2 ** (K + 1)))
        self.links = np.asarray(links, dtype=np.int64)
        self.tables = np.asarray(tables, dtype=float)
        if self.links.shape != (N, K) or self.tables.shape != (N, 2 ** (K + 1)):
            raise ConfigurationError("NK links/tables have the wrong shape")
        # column i of ``_members`` lists bit i and its links, MSB first
        self._members = np.column_stack([np.arange(N), self.links])
        self._weights = 1 << np.arange(K, -1, -1)

    def evaluate(self, x) -> float:
        bits = np.asarray(x, dtype=np.int64)
        idx = bits[self._members] @ self._weights
        return float(self.tables[np.arange(self.N), idx].mean())

    def enumerate_all(self) -> np.ndarray:
        """Fitness of every one of the 2**N candidates, indexed by the
        integer whose binary digits (bit 0 = x[0]) form the candidate."""
        codes = np.arange(2**self.N, dtype=np.int64)
        bits = (codes[:, None] >> np.arange(self.N)) & 1
        idx = bits[:, self._members] @ self._weights
        return self.tables[np.arange(self.N), idx].mean(axis=1)

    def describe(self):
        return {"name": self.name, "n": self.n, "N": self.N, "K": self.K, "seed": self.seed}


def nk_landscape(N: int, K: int, seed: int = 0) -> NKLandscape:
    return NKLandscape(N, K, seed)


class Quantized(FitnessProblem):
    """Wraps a problem and floors its fitness onto a grid of step ``grain``."""

    def __init__(self, problem: FitnessProblem, grain: float):
        if not grain > 0:
            raise ConfigurationError("grain must be > 0")
        super().__init__(problem.bounds)
        self.inner = problem
        self.grain = float(grain)
        self.name = f"quantized-{problem.name}"
        self.nominal_cost = problem.nominal_cost

    def evaluate(self, x) -> float:
        return math.floor(self.inner.evaluate(x) / self.grain) * self.grain

    def reference_candidate(self):
        return self.inner.reference_candidate()

    def describe(self):
        return {"name": self.name, "grain": self.grain, "inner": self.inner.describe()}


def quantize(problem: FitnessProblem, grain: float) -> Quantized:
    return Quantized(problem, grain)


# ---------------------------------------------------------------------------
# Load-following surrogate


def ps_insertion(T, overlaps, height: int = 255) -> np.ndarray:
    """Insertions of the four power-shimming groups (G1, G2, N1, N2).

    Group ``k+1`` starts when group ``k`` has moved ``height - o_k`` steps;
    each engaged group moves one step per totalizer step.
    """
    overlaps = np.asarray(overlaps, dtype=float)
    if overlaps.shape != (3,) or np.any(overlaps < 0) or np.any(overlaps > height):
        raise ConfigurationError(f"overlaps must be three values in [0, {height}]")
    starts = np.concatenate([[0.0], np.cumsum(height - overlaps)])
    travel = starts[-1] + height
    if not 0 <= T <= travel:
        raise ValueError(f"totalizer {T} outside [0, {travel}]")
    return np.clip(T - starts, 0.0, height)


def total_travel(overlaps, height: int = 255) -> float:
    return 4 * height - float(np.sum(overlaps))


def tr_speed(dT: float, db: float, vmax: float, vmin: float, full_speed_at: float = 2.8) -> float:
    """Signed speed (steps/min) of the temperature-regulation rods.

    ``dT`` is mean minus reference temperature; positive speeds insert. Zero in
    the dead band ``|dT| <= db``, ``vmax`` beyond ``full_speed_at``, linear
    from ``vmin`` to ``vmax`` in between.
    """
    a = abs(dT)
    if a <= db:
        return 0.0
    if a >= full_speed_at or db >= full_speed_at:
        mag = vmax
    else:
        mag = vmin + (vmax - vmin) * (a - db) / (full_speed_at - db)
    return math.copysign(mag, dT)


@dataclass(frozen=True)
class SurrogateConstants:
    """Every tunable constant of the load-following surrogate."""

    height: int = 255
    # totalizer demanded by the calibration: 0 at 100 % power, calib_T_max at calib_P_min
    calib_T_max: float = 500.0
    calib_P_min: float = 0.25
    # effective totalizer speed = ps_speed_scale * v_k (steps/min)
    ps_speed_scale: float = 0.1
    # TR speed codes to steps/min: steps = scale * code + offset
    tr_vmax_scale: float = 6.0
    tr_vmax_offset: float = 0.0
    tr_vmin_scale: float = 1.0
    tr_vmin_offset: float = 0.0
    tr_full_speed_at: float = 2.8
    # dead band code is in tenths of a degree
    db_scale: float = 0.1
    # reactivity worth of a fully inserted group (G1, G2, N1, N2) and TR bank
    ps_worth: tuple = (0.5, 1.0, 1.0, 1.0)
    tr_worth: float = 1.6
    # worth of absorber needed per unit of lost power
    power_defect: float = 2.4
    # T_m - T_ref per unit of reactivity mismatch, and its time constant (s)
    temp_gain: float = 12.0
    temp_tau: float = 300.0
    # reference temperature slope (deg C per unit relative power)
    tref_slope: float = 18.0
    # axial effect of each group (top-inserted depth), and of the TR bank
    ao_weight: tuple = (0.4, 0.8, 0.8, 0.8)
    ao_weight_tr: float = 1.5
    # AO(t+dt) = AO + dt*(alpha*A - beta*(AO - AO_eq))
    ao_alpha: float = -5.0e-5
    ao_beta: float = 1.0 / 1800.0
    ao_eq: float = -0.02
    # initial TR insertion as a fraction of the maneuvering band
    tr_initial_fraction: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateConstants":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown surrogate constants: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


@dataclass(frozen=True)
class DemandProfile:
    """Piecewise-linear power demand sampled on a fixed time grid."""

    t: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        p = np.asarray(self.power, dtype=float)
        if t.ndim != 1 or t.shape != p.shape or t.size < 1:
            raise ConfigurationError("profile t and power must be 1-D of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ConfigurationError("profile time must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "power", p)

    @classmethod
    def trapezoid(
        cls,
        low: float = 0.5,
        hold_high: float = 1.0,
        ramp_down: float = 1.0,
        hold_low: float = 6.0,
        ramp_up: float = 1.0,
        duration: float = 11.0,
        dt: float = 60.0,
    ) -> "DemandProfile":
        """100 % -> ``low`` -> 100 % trapezoid; durations in hours."""
        knots_h = np.cumsum([0.0, hold_high, ramp_down, hold_low, ramp_up])
        if knots_h[-1] > duration:
            raise ConfigurationError("trapezoid phases exceed the transient duration")
        knots_p = [1.0, 1.0, low, low, 1.0]
        n = int(round(duration * 3600.0 / dt)) + 1
        t = np.arange(n) * dt
        return cls(t, np.interp(t, knots_h * 3600.0, knots_p))

    @classmethod
    def constant(cls, level: float = 1.0, duration: float = 11.0, dt: float = 60.0):
        n = int(round(duration * 3600.0 / dt)) + 1
        return cls(np.arange(n) * dt, np.full(n, level))


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    p_r: np.ndarray
    ao: np.ndarray

    @property
    def delta_i(self) -> np.ndarray:
        return self.p_r * self.ao

    def __len__(self):
        return len(self.t)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "P_r", "AO", "dI"])
            for row in zip(self.t, self.p_r, self.ao, self.delta_i):
                w.writerow([repr(float(v)) for v in row])


def control_diagram_criterion(traj: Trajectory) -> float:
    """Power-weighted area between the (dI, P_r) path and its constant-AO line.

    The reference line passes through the first point: ``dI_ref = P_r * AO_0``.
    """
    p = np.asarray(traj.p_r, dtype=float)
    ao = np.asarray(traj.ao, dtype=float)
    if p.size < 2:
        raise MalformedTrajectoryError("criterion needs at least two points")
    d = np.abs(p * ao - p * ao[0])
    return float(0.25 * np.sum(np.abs(np.diff(p * p)) * (d[1:] + d[:-1])))


@numba.njit(cache=True)
def _simulate(
    power, dt, o, v, tr_vmax, tr_vmin, mb, db,
    height, calib_T_max, calib_P_min, ps_speed_scale, tr_full,
    ps_worth, tr_worth, power_defect, temp_gain, temp_tau, tref_slope,
    ao_w, ao_w_tr, alpha, beta, ao_eq, tr0_frac,
):  # pragma: no cover - compiled
    n = power.size
    ao_out = np.empty(n)
    starts = np.empty(4)
    starts[0] = 0.0
    for k in range(3):
        starts[k + 1] = starts[k] + height - o[k]
    travel = starts[3] + height
    twopi = 2.0 * np.pi

    tr = tr0_frac * mb
    tr_worth0 = tr_worth * (tr / height - np.sin(twopi * tr / height) / twopi)

    def absorber(T, tr):
        w = 0.0
        a = 0.0
        for k in range(4):
            ins = min(max(T - starts[k], 0.0), height) / height
            w += ps_worth[k] * (ins - np.sin(twopi * ins) / twopi)
            a += ao_w[k] * np.sin(np.pi * ins)
        x = tr / height
        w += tr_worth * (x - np.sin(twopi * x) / twopi)
        a += ao_w_tr * np.sin(np.pi * x)
        return w, a

    T = 0.0
    tm = tref_slope * (power[0] - 1.0)
    tm_dev = 0.0
    w, a = absorber(T, tr)
    ao = ao_eq + (alpha / beta) * a
    ao_out[0] = ao
    for i in range(1, n):
        p = power[i]
        # calibration target for the totalizer
        target = calib_T_max * (1.0 - p) / (1.0 - calib_P_min)
        target = min(max(target, 0.0), travel)
        # the last group engaged in the direction of motion sets the speed
        lead = 0
        for k in range(1, 4):
            if starts[k] < T or (starts[k] == T and target > T):
                lead = k
        step = ps_speed_scale * v[lead] * dt / 60.0
        if target > T:
            T = min(T + step, target)
        elif target < T:
            T = max(T - step, target)
        # temperature regulation
        speed = 0.0
        adev = abs(tm_dev)
        if adev > db:
            if adev >= tr_full or db >= tr_full:
                speed = tr_vmax
            else:
                speed = tr_vmin + (tr_vmax - tr_vmin) * (adev - db) / (tr_full - db)
            if tm_dev < 0.0:
                speed = -speed
        tr = min(max(tr + speed * dt / 60.0, 0.0), mb)
        w, a = absorber(T, tr)
        needed = tr_worth0 + power_defect * (1.0 - p)
        eq_dev = temp_gain * (needed - w)
        # the mean temperature lags its equilibrium around T_ref(P)
        tref = tref_slope * (p - 1.0)
        tm += dt / temp_tau * (tref + eq_dev - tm)
        tm_dev = tm - tref
        ao += dt * (alpha * a - beta * (ao - ao_eq))
        ao_out[i] = ao
    return ao_out


class LoadFollowingSurrogate(FitnessProblem):
    """Deterministic surrogate of the load-following transient.

    Candidates are the 11 integer control-rod variables
    ``(o1, o2, o3, v1, v2, v3, v4, V, v, mb, db)``. Relative power follows the
    demand profile; the power-shimming totalizer tracks the calibration at the
    speed of its leading group; the mean temperature responds to the
    reactivity mismatch; the TR bank follows :func:`tr_speed` inside the
    maneuvering band; AO relaxes toward an equilibrium shifted by the
    top-inserted absorber. Fitness is :func:`control_diagram_criterion`.
    """

    name = "nroo-surrogate"

    def __init__(
        self,
        bounds: BoundsSpec | None = None,
        constants: SurrogateConstants | None = None,
        profile: DemandProfile | None = None,
    ):
        bounds = nroo_bounds() if bounds is None else bounds
        if bounds.n != 11:
            raise ConfigurationError("the surrogate needs 11 variables")
        super().__init__(bounds)
        self.constants = constants or SurrogateConstants()
        self.profile = profile or DemandProfile.trapezoid()

    def decode(self, x) -> dict:
        c = self.constants
        x = np.asarray(x, dtype=float)
        return {
            "overlaps": x[0:3],
            "ps_speeds": x[3:7],
            "tr_vmax": c.tr_vmax_scale * x[7] + c.tr_vmax_offset,
            "tr_vmin": c.tr_vmin_scale * x[8] + c.tr_vmin_offset,
            "mb": x[9],
            "db": c.db_scale * x[10],
        }

    def simulate(self, x, profile: DemandProfile | None = None) -> Trajectory:
        prof = profile or self.profile
        c = self.constants
        d = self.decode(x)
        dt = float(prof.t[1] - prof.t[0]) if prof.t.size > 1 else 60.0
        ao = _simulate(
            prof.power, dt, d["overlaps"], d["ps_speeds"], float(d["tr_vmax"]),
            float(d["tr_vmin"]), float(d["mb"]), float(d["db"]),
            float(c.height), c.calib_T_max, c.calib_P_min, c.ps_speed_scale, c.tr_full_speed_at,
            np.asarray(c.ps_worth, float), c.tr_worth, c.power_defect, c.temp_gain,
            c.temp_tau, c.tref_slope, np.asarray(c.ao_weight, float), c.ao_weight_tr,
            c.ao_alpha, c.ao_beta, c.ao_eq, c.tr_initial_fraction,
        )
        return Trajectory(prof.t.copy(), prof.power.copy(), ao)

    def evaluate(self, x) -> float:
        return control_diagram_criterion(self.simulate(x))

    def reference_candidate(self) -> np.ndarray:
        """The bounds' reference row in search encoding.

        Exempt coordinates (the TR speeds, printed in steps/min) are mapped
        back through the inverse affine speed map and clipped into bounds.
        """
        b, c = self.bounds, self.constants
        ref = np.array(b.reference, dtype=np.int64)
        inverse = {7: (c.tr_vmax_scale, c.tr_vmax_offset), 8: (c.tr_vmin_scale, c.tr_vmin_offset)}
        for j in b.exempt:
            if j in inverse and not b.lb[j] <= ref[j] <= b.ub[j]:
                scale, offset = inverse[j]
                ref[j] = int(round((ref[j] - offset) / scale))
        return np.clip(ref, b.lb, b.ub)

    def describe(self):
        return {"name": self.name, "constants": self.constants.to_dict()}


def simulate_transient(x, profile: DemandProfile | None = None, **kwargs) -> Trajectory:
    return LoadFollowingSurrogate(**kwargs).simulate(x, profile)


def make_problem(name: str, **options) -> FitnessProblem:
    """Build a registered problem by name (``nroo-surrogate``, ``nk``, ...)."""
    grain = options.pop("grain", None)
    if name == "nroo-surrogate":
        consts = options.pop("constants", None)
        prob = LoadFollowingSurrogate(
            bounds=options.pop("bounds", None),
            constants=SurrogateConstants.from_dict(consts) if isinstance(consts, dict) else consts,
            profile=options.pop("profile", None),
        )
    elif name == "nk":
        prob = NKLandscape(int(options.pop("N", 16)), int(options.pop("K", 2)), int(options.pop("seed", 0)))
    elif name == "separable":
        prob = SeparableProblem(options.pop("bounds", None) or nroo_bounds())
    elif name == "constant":
        prob = ConstantProblem(options.pop("bounds", None) or nroo_bounds(), options.pop("value", 1.0))
    else:
        raise ConfigurationError(f"unknown problem {name!r}")
    if options:
        raise ConfigurationError(f"unused options for problem {name!r}: {sorted(options)}")
    return prob if grain is None else Quantized(prob, float(grain))
