"""Statistical estimators built on the simulator.

Ratio estimators over regeneration cycles use exactly rounded sums
(``math.fsum``), so results do not depend on cycle order and are identical
however the cycles were split across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import expr as ex
from ._backend import kernels
from .intensity import (
    IntensityExpr,
    IntensityField,
    TestFunction,
    integrated_rate,
    survival_probability,
)
from .rng import SeedSpec, run_chunks
from .simulate import (
    CycleSet,
    collect_cycles,
    hitting_time_samples,
    jump_count_samples,
    state_samples_at,
)
from .state import REGENERATION_STATE, StateX, lyapunov_L

__all__ = [
    "EstimateCI",
    "InsufficientCyclesError",
    "CensoringError",
    "UninformativeGridError",
    "ratio_estimate",
    "mean_estimate",
    "availability_factor",
    "availability_table",
    "stationary_functional",
    "HittingRow",
    "HittingTable",
    "hitting_moment_experiment",
    "DynkinReport",
    "dynkin_report",
    "dynkin_residual",
    "dynkin_residual_time",
    "tv_marginal",
    "StationaryReference",
    "stationary_reference",
    "ConvergenceCurve",
    "convergence_experiment",
    "JumpProbRow",
    "JumpProbReport",
    "jump_probability_experiment",
]

Z95 = float(stats.norm.ppf(0.975))
MIN_CYCLES = 100
NOISE_BAND_SD = 4.0
TV_NOTE = (
    "TV is measured on the queue-length marginal only (a lower bound on the full-state "
    "distance). The constants C and k of the polynomial bound are not identified; only "
    "the shape of the decay is assessed."
)


class InsufficientCyclesError(ValueError):
    pass


class CensoringError(RuntimeError):
    """Too many hitting times were censored for a moment bound to be checked."""


class UninformativeGridError(RuntimeError):
    """Every grid point is already at the statistical noise floor."""


@dataclass(frozen=True)
class EstimateCI:
    value: float
    std_error: float
    ci_low: float
    ci_high: float
    n_samples: int

    @classmethod
    def normal(cls, value: float, se: float, n: int) -> "EstimateCI":
        value, se = float(value), float(se)
        return cls(value, se, value - Z95 * se, value + Z95 * se, int(n))

    def z_score(self, target: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.value == target else math.inf
        return abs(self.value - target) / self.std_error

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_samples": self.n_samples,
        }


def _fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=np.float64).ravel().tolist())


def ratio_estimate(num, den) -> EstimateCI:
    """``sum(num) / sum(den)`` over i.i.d. pairs with a delta-method error."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    n = len(num)
    if n < 2:
        raise InsufficientCyclesError("need at least two cycles")
    total_den = _fsum(den)
    r = _fsum(num) / total_den
    z = num - r * den
    var = _fsum(z * z) / (n - 1)
    se = math.sqrt(var / n) / (total_den / n)
    return EstimateCI.normal(r, se, n)


def mean_estimate(samples) -> EstimateCI:
    x = np.asarray(samples, dtype=np.float64)
    n = len(x)
    mean = _fsum(x) / n
    var = _fsum((x - mean) ** 2) / (n - 1) if n > 1 else 0.0
    return EstimateCI.normal(mean, math.sqrt(var / n), n)


def _require_cycles(cycles: CycleSet):
    if len(cycles) < MIN_CYCLES:
        raise InsufficientCyclesError(f"need at least {MIN_CYCLES} cycles, got {len(cycles)}")


def availability_factor(cycles: CycleSet, m: int) -> EstimateCI:
    """Stationary probability of exactly ``m`` customers."""
    _require_cycles(cycles)
    if not 0 <= m < cycles.levels:
        raise ValueError(f"m must be in [0, {cycles.levels}) for this cycle set")
    return ratio_estimate(cycles.occupation[:, m], cycles.lengths)


def availability_table(cycles: CycleSet, m_max: int) -> list[EstimateCI]:
    return [availability_factor(cycles, m) for m in range(m_max + 1)]


def stationary_functional(cycles: CycleSet, g) -> EstimateCI:
    """Stationary mean of a state functional ``g`` by the regenerative ratio."""
    _require_cycles(cycles)
    return ratio_estimate(cycles.integral_of(g), cycles.lengths)


# --------------------------------------------------------------------------
# hitting times


@dataclass(frozen=True)
class HittingRow:
    start: StateX
    moment: EstimateCI
    lyapunov: float
    ratio: float
    censored_fraction: float


@dataclass(frozen=True)
class HittingTable:
    k: int
    m: int
    rows: tuple[HittingRow, ...]

    @property
    def max_ratio(self) -> float:
        return max(r.ratio for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "m": self.m,
            "max_ratio": self.max_ratio,
            "rows": [
                {
                    "start": list(r.start.as_tuple()),
                    "moment": r.moment.to_dict(),
                    "lyapunov": r.lyapunov,
                    "ratio": r.ratio,
                    "censored_fraction": r.censored_fraction,
                }
                for r in self.rows
            ],
        }


def hitting_moment_experiment(f: IntensityField, starts, k: int, m: int, replicas: int,
                              seed: SeedSpec, cap: float = 1e6, jobs: int = 1,
                              max_censored: float = 0.01) -> HittingTable:
    """Estimate ``E tau0^k`` from each start next to ``L_m(start)``.

    Raises :class:`CensoringError` when more than ``max_censored`` of the
    paths from some start had not emptied by ``cap``.
    """
    if not m > k >= 1:
        raise ValueError("need m > k >= 1")
    rows = []
    for s in starts:
        s = StateX.of(s)
        lm = lyapunov_L(s, m)
        if s.n == 0:
            est = EstimateCI.normal(0.0, 0.0, replicas)
            rows.append(HittingRow(s, est, lm, 0.0, 0.0))
            continue
        taus, cens = hitting_time_samples(f, s, replicas, seed, cap=cap, jobs=jobs)
        frac = float(cens.mean())
        if frac > max_censored:
            raise CensoringError(
                f"{frac:.2%} of paths from {s.as_tuple()} were censored at {cap:g}"
            )
        est = mean_estimate(taus[~cens] ** k)
        rows.append(HittingRow(s, est, lm, est.value / lm, frac))
    return HittingTable(k, m, tuple(rows))


# --------------------------------------------------------------------------
# Dynkin / martingale residuals


@dataclass(frozen=True)
class DynkinReport:
    residual: EstimateCI
    scale: float
    test_function: str
    start: StateX
    horizon: float

    @property
    def relative_se(self) -> float:
        return self.residual.std_error / self.scale if self.scale else math.inf

    def to_dict(self) -> dict:
        return {
            "test_function": self.test_function,
            "start": list(self.start.as_tuple()),
            "horizon": self.horizon,
            "residual": self.residual.to_dict(),
            "scale": self.scale,
            "relative_se": self.relative_se,
        }


def _test_expr(fn, allow_time: bool) -> IntensityExpr:
    if isinstance(fn, TestFunction):
        if not hasattr(fn, "expr"):
            raise TypeError("simulated residuals need an expression-backed test function")
        return fn.expr
    if isinstance(fn, IntensityExpr):
        return fn
    return IntensityExpr.parse(str(fn), allow_time=allow_time)


def dynkin_report(f: IntensityField, fn, s0: StateX, t: float, replicas: int, seed: SeedSpec,
                  jobs: int = 1, allow_time: bool = True) -> DynkinReport:
    """Monte Carlo mean of ``fn(T, X_T) - fn(0, X_0) - int_0^T (d/ds + G) fn(s, X_s) ds``.

    ``scale`` is ``max(|fn(0, X_0)|, mean |fn(T, X_T)|)``, the yardstick for
    the residual's standard error.
    """
    s0 = StateX.of(s0)
    e = _test_expr(fn, allow_time)
    parts, _ = run_chunks(
        lambda size, bg: kernels.dynkin(f.kernel_model, e.program, s0.n, s0.x, s0.y, t, size, bg),
        replicas, seed, ("dynkin", e.text), jobs,
    )
    res = np.concatenate([p[0] for p in parts])
    finals = np.concatenate([p[1] for p in parts])
    scale = max(abs(e(s0.n, s0.x, s0.y, 0.0)), _fsum(np.abs(finals)) / len(finals))
    return DynkinReport(mean_estimate(res), scale, e.text, s0, float(t))


def dynkin_residual(f: IntensityField, fn, s0: StateX, t: float, replicas: int, seed: SeedSpec,
                    jobs: int = 1) -> EstimateCI:
    """Residual of Dynkin's formula for a time-independent test function."""
    e = _test_expr(fn, allow_time=False)
    if "t" in ex.variables(e.tree):
        raise ValueError("use dynkin_residual_time for time-dependent test functions")
    return dynkin_report(f, e, s0, t, replicas, seed, jobs).residual


def dynkin_residual_time(f: IntensityField, phi, s0: StateX, t: float, replicas: int,
                         seed: SeedSpec, jobs: int = 1) -> EstimateCI:
    """Residual of the time-dependent Dynkin formula (includes ``d/ds``)."""
    return dynkin_report(f, _test_expr(phi, True), s0, t, replicas, seed, jobs).residual


# --------------------------------------------------------------------------
# total variation convergence


def _normalise_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    size = max(len(p), len(q))
    p = np.pad(p, (0, size - len(p)))
    q = np.pad(q, (0, size - len(q)))
    return p, q


def tv_marginal(p, q) -> float:
    """Total variation distance ``0.5 * sum |p - q|`` between histograms."""
    p, q = _normalise_pair(p, q)
    for name, h in (("p", p), ("q", q)):
        if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a normalised histogram")
    return min(1.0, 0.5 * _fsum(np.abs(p - q)))


@dataclass(frozen=True, eq=False)
class StationaryReference:
    """Stationary queue-length histogram from regeneration cycles."""

    cycles: CycleSet

    @property
    def histogram(self) -> np.ndarray:
        total = _fsum(self.cycles.lengths)
        return np.array([_fsum(c) for c in self.cycles.occupation.T]) / total

    def bootstrap(self, rng: np.random.Generator) -> np.ndarray:
        """One cycle-bootstrap replicate of the histogram."""
        n = len(self.cycles)
        w = rng.multinomial(n, np.full(n, 1.0 / n)).astype(np.float64)
        return (w @ self.cycles.occupation) / (w @ self.cycles.lengths)


def stationary_reference(f: IntensityField, num_cycles: int, seed: SeedSpec, levels: int = 64,
                         jobs: int = 1) -> StationaryReference:
    return StationaryReference(collect_cycles(f, 0, num_cycles, (), seed.spawn("reference"),
                                              levels=levels, jobs=jobs))


@dataclass(frozen=True)
class ConvergenceCurve:
    times: np.ndarray
    tv_estimates: np.ndarray
    tv_sd: np.ndarray
    noise_floor: float
    noise_sd: float
    fit_exponent: float | None
    fit_intercept: float | None
    fit_mask: np.ndarray
    replicas: int
    note: str = TV_NOTE

    @property
    def noise_band(self) -> float:
        return self.noise_floor + NOISE_BAND_SD * self.noise_sd

    @property
    def tv_corrected(self) -> np.ndarray:
        return np.maximum(self.tv_estimates - self.noise_floor, 0.0)

    @property
    def at_floor(self) -> np.ndarray:
        return self.tv_estimates <= self.noise_band

    def monotone_within_noise(self, z: float = 3.0) -> bool:
        tv, sd = self.tv_estimates, self.tv_sd
        slack = z * np.sqrt(sd[1:] ** 2 + sd[:-1] ** 2 + 2 * self.noise_sd**2)
        return bool(np.all(tv[1:] <= tv[:-1] + slack))

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "tv": self.tv_estimates.tolist(),
            "tv_sd": self.tv_sd.tolist(),
            "noise_floor": self.noise_floor,
            "noise_sd": self.noise_sd,
            "noise_band": self.noise_band,
            "fit_exponent": self.fit_exponent,
            "fit_intercept": self.fit_intercept,
            "fit_points": int(self.fit_mask.sum()),
            "replicas": self.replicas,
            "note": self.note,
        }


def _histogram(ns: np.ndarray, levels: int) -> np.ndarray:
    return np.bincount(np.minimum(ns, levels), minlength=levels + 1) / len(ns)


def convergence_experiment(f: IntensityField, s0, time_grid, replicas: int, seed: SeedSpec,
                           reference: StationaryReference, bootstrap: int = 200,
                           window: tuple[float, float] | None = None,
                           stationary_warmup: float = 200.0, require_fit: bool = True,
                           jobs: int = 1) -> ConvergenceCurve:
    """TV distance between the law of ``n_t`` from ``s0`` and the reference.

    For each grid time, ``replicas`` fresh paths are simulated. The noise
    floor is the mean TV between a multinomial sample of size ``replicas``
    drawn from the reference and a cycle-bootstrap replicate of the
    reference. ``log(TV - floor)`` is regressed on ``log(1 + t)`` over the
    leading run of grid points (inside ``window``) that sit above the
    noise band. ``s0="stationary"`` starts every path from ``(1, 0, 0)``
    and lets it run for ``stationary_warmup`` before the clock starts.
    """
    times = np.asarray(time_grid, dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    stationary = isinstance(s0, str)
    if stationary and s0 != "stationary":
        raise ValueError("s0 must be a state or 'stationary'")
    start = REGENERATION_STATE if stationary else StateX.of(s0)
    offset = stationary_warmup if stationary else 0.0
    levels = reference.cycles.levels
    ref = reference.histogram
    rng = seed.spawn("bootstrap").generator()

    null = np.empty(bootstrap)
    for b in range(bootstrap):
        emp = rng.multinomial(replicas, ref / ref.sum()) / replicas
        null[b] = 0.5 * np.abs(emp - reference.bootstrap(rng)).sum()
    floor, floor_sd = float(null.mean()), float(null.std(ddof=1))

    tv = np.empty(len(times))
    tv_sd = np.empty(len(times))
    for i, t in enumerate(times):
        ns = state_samples_at(f, start, offset + t, replicas, seed, jobs, tag=("converge", i))
        hist = _histogram(ns, levels)
        tv[i] = tv_marginal(hist, ref)
        boots = rng.multinomial(replicas, hist, size=bootstrap) / replicas
        tv_sd[i] = float((0.5 * np.abs(boots - ref).sum(axis=1)).std(ddof=1))

    band = floor + NOISE_BAND_SD * floor_sd
    lo, hi = window if window is not None else (times[0], times[-1])
    mask = np.zeros(len(times), dtype=bool)
    for i in np.flatnonzero((times >= lo) & (times <= hi)):
        if tv[i] <= band:
            break
        mask[i] = True
    exponent = intercept = None
    if mask.sum() >= 2:
        slope, icpt = np.polyfit(np.log1p(times[mask]), np.log(tv[mask] - floor), 1)
        exponent, intercept = float(slope), float(icpt)
    elif require_fit:
        raise UninformativeGridError(
            "fewer than two grid points above the noise floor; use earlier or denser times"
        )
    return ConvergenceCurve(times, tv, tv_sd, floor, floor_sd, exponent, intercept, mask, replicas)


# --------------------------------------------------------------------------
# small-interval jump probabilities


@dataclass(frozen=True)
class JumpProbRow:
    delta: float
    trials: int
    p_none: float
    survival: float
    p_up_only: float
    int_lambda: float
    p_down_only: float
    int_h: float
    p_two_plus: float
    allowance: float

    @property
    def se_none(self) -> float:
        return math.sqrt(self.survival * (1 - self.survival) / self.trials)

    def _se(self, p):
        return math.sqrt(max(p * (1 - p), 1.0 / self.trials) / self.trials)

    @property
    def none_ok(self) -> bool:
        return abs(self.p_none - self.survival) <= 3 * self.se_none

    @property
    def up_ok(self) -> bool:
        return abs(self.p_up_only - self.int_lambda) <= 3 * self._se(self.int_lambda) + self.allowance

    @property
    def down_ok(self) -> bool:
        return abs(self.p_down_only - self.int_h) <= 3 * self._se(self.int_h) + self.allowance

    @property
    def two_plus_scaled(self) -> float:
        return self.p_two_plus / self.delta**2

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "trials": self.trials,
            "p_none": self.p_none,
            "survival": self.survival,
            "se_none": self.se_none,
            "none_ok": self.none_ok,
            "p_up_only": self.p_up_only,
            "int_lambda": self.int_lambda,
            "up_ok": self.up_ok,
            "p_down_only": self.p_down_only,
            "int_h": self.int_h,
            "down_ok": self.down_ok,
            "p_two_plus": self.p_two_plus,
            "p_two_plus_over_delta2": self.two_plus_scaled,
            "allowance": self.allowance,
        }


@dataclass(frozen=True)
class JumpProbReport:
    start: StateX
    rows: tuple[JumpProbRow, ...]
    ratio_band: tuple[float, float] = (0.15, 0.6)

    @property
    def two_plus_ratios(self) -> list[float]:
        """``P(>=2 jumps)`` at each level divided by the previous (larger) level."""
        p = [r.p_two_plus for r in self.rows]
        return [b / a if a > 0 else math.inf for a, b in zip(p, p[1:])]

    @property
    def ratios_ok(self) -> bool:
        lo, hi = self.ratio_band
        return all(lo <= r <= hi for r in self.two_plus_ratios)

    @property
    def ok(self) -> bool:
        return self.ratios_ok and all(r.none_ok and r.up_ok and r.down_ok for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "start": list(self.start.as_tuple()),
            "rows": [r.to_dict() for r in self.rows],
            "two_plus_ratios": self.two_plus_ratios,
            "ratio_band": list(self.ratio_band),
            "ratios_ok": self.ratios_ok,
            "ok": self.ok,
        }


def jump_probability_experiment(f: IntensityField, s: StateX, deltas, trials: int, seed: SeedSpec,
                                jobs: int = 1) -> JumpProbReport:
    """Empirical jump-count probabilities on ``(0, delta]`` against their
    integrated-intensity approximations. The one-jump comparisons allow an
    extra ``(lambda_sup + h_sup)^2 * delta^2`` for the second-order term."""
    s = StateX.of(s)
    deltas = sorted((float(d) for d in deltas), reverse=True)
    rows = []
    for d in deltas:
        ups, downs = jump_count_samples(f, s, d, trials, seed, jobs)
        total = ups + downs
        rows.append(JumpProbRow(
            delta=d,
            trials=trials,
            p_none=float(np.mean(total == 0)),
            survival=survival_probability(f, s, d),
            p_up_only=float(np.mean((ups == 1) & (downs == 0))),
            int_lambda=integrated_rate(f, s, d, "arrival"),
            p_down_only=float(np.mean((ups == 0) & (downs == 1))),
            int_h=integrated_rate(f, s, d, "service"),
            p_two_plus=float(np.mean(total >= 2)),
            allowance=f.bound**2 * d**2,
        ))
    return JumpProbReport(s, tuple(rows))
