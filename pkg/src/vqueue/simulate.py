"""Exact simulation of the variable-intensity queue.

The primary sampler is thinning against the declared bound
``lambda_sup + h_sup`` (compiled kernel). :func:`next_event_inversion` is an
independent sampler that inverts the integrated hazard with scipy
quadrature; it exists to cross-check the kernel.
"""
from __future__ import annotations

import bisect
import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from . import expr as ex
from ._backend import kernels
from .intensity import (
    IntensityExpr,
    IntensityField,
    arrival_rate,
    integrated_rate,
    service_rate,
    validate_conditions,
)
from .rng import CHUNK_SIZE, SeedSpec, run_chunks
from .state import StateX, flow, jump_down, jump_up

__all__ = [
    "EventKind",
    "PathEvent",
    "Trajectory",
    "Censored",
    "CycleSet",
    "RegenerationCycle",
    "next_event_thinning",
    "next_event_inversion",
    "sample_next_events",
    "simulate_path",
    "hitting_time_tau0",
    "hitting_time_samples",
    "collect_cycles",
    "state_samples_at",
    "jump_count_samples",
]

INVERSION_HORIZON = 1e6
DEFAULT_CAP = 1e6


class EventKind(enum.IntEnum):
    ARRIVAL = 0
    SERVICE_END = 1

    @property
    def label(self) -> str:
        return "Arrival" if self is EventKind.ARRIVAL else "ServiceEnd"


@dataclass(frozen=True)
class PathEvent:
    t: float
    kind: EventKind
    state_after: StateX


@dataclass(frozen=True)
class Censored:
    """Observation cut off at ``cap`` without the event having happened."""

    cap: float


@dataclass(frozen=True)
class Trajectory:
    initial: StateX
    events: tuple[PathEvent, ...]
    horizon: float

    def __post_init__(self):
        times = [e.t for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("event times must be strictly increasing")

    @property
    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events], dtype=np.float64)

    @property
    def arrivals(self) -> int:
        return sum(1 for e in self.events if e.kind is EventKind.ARRIVAL)

    def state_at(self, t: float) -> StateX:
        """State at time ``t``; right-continuous at jump times."""
        if not 0 <= t <= self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        i = bisect.bisect_right([e.t for e in self.events], t)
        if i == 0:
            return flow(self.initial, t)
        last = self.events[i - 1]
        return flow(last.state_after, t - last.t)

    def to_csv(self, path) -> None:
        """Columns ``t, kind, n, x, y``; the first row is the initial state.

        ``path`` may also be an open text stream.
        """
        if hasattr(path, "write"):
            self._write_csv(path)
        else:
            with open(path, "w", newline="") as fh:
                self._write_csv(fh)

    def _write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "kind", "n", "x", "y"])
        s = self.initial
        w.writerow([_g12(0.0), "Start", s.n, _g12(s.x), _g12(s.y)])
        for e in self.events:
            s = e.state_after
            w.writerow([_g12(e.t), e.kind.label, s.n, _g12(s.x), _g12(s.y)])

    @classmethod
    def read_csv(cls, path, horizon: float) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        first = rows[0]
        initial = StateX(int(first["n"]), float(first["x"]), float(first["y"]))
        events = tuple(
            PathEvent(
                float(r["t"]),
                EventKind.ARRIVAL if r["kind"] == "Arrival" else EventKind.SERVICE_END,
                StateX(int(r["n"]), float(r["x"]), float(r["y"])),
            )
            for r in rows[1:]
        )
        return cls(initial, events, horizon)


def _g12(v: float) -> str:
    return format(v, ".12g")


def _bitgen(rng):
    if isinstance(rng, np.random.Generator):
        return rng.bit_generator
    if isinstance(rng, SeedSpec):
        return rng.bit_generator()
    return rng


# --------------------------------------------------------------------------
# next-event samplers


def next_event_thinning(f: IntensityField, s: StateX, rng) -> tuple[float, EventKind]:
    """One draw of (time to next jump, kind) by thinning.

    ``rng`` is a numpy ``Generator``, ``BitGenerator`` or :class:`SeedSpec`.
    """
    dts, kinds = kernels.next_events(f.kernel_model, s.n, s.x, s.y, 1, _bitgen(rng))
    return float(dts[0]), EventKind(int(kinds[0]))


def sample_next_events(f: IntensityField, s: StateX, count: int, seed: SeedSpec,
                       sampler: str = "thinning", jobs: int = 1):
    """``count`` independent next-event draws from ``s``: arrays (dt, kind)."""
    if sampler == "thinning":
        parts, _ = run_chunks(
            lambda size, bg: kernels.next_events(f.kernel_model, s.n, s.x, s.y, size, bg),
            count, seed, "next", jobs,
        )
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
    if sampler != "inversion":
        raise ValueError(f"unknown sampler {sampler!r}")
    gen = seed.generator()
    dts = np.empty(count)
    kinds = np.empty(count, dtype=np.int8)
    for i in range(count):
        u, uk = gen.random(2)
        dt, kind = next_event_inversion(f, s, u, uk)
        if isinstance(dt, Censored):
            dts[i], kinds[i] = math.inf, -1
        else:
            dts[i], kinds[i] = dt, int(kind)
    return dts, kinds


def next_event_inversion(f: IntensityField, s: StateX, u: float, u_kind: float | None = None,
                         horizon: float = INVERSION_HORIZON, tol: float = 1e-10):
    """Time to the next jump as the ``u``-quantile of its distribution.

    Solves ``1 - survival(z) = u`` for ``z`` by bracketing (doubling) and
    Brent's method on the integrated hazard. When ``u_kind`` is given the
    kind is drawn from the channel intensities at the jump time. If the
    jump probability mass within ``horizon`` is below ``u`` the result is
    ``(Censored(horizon), None)``.
    """
    if not 0.0 <= u < 1.0:
        raise ValueError("u must lie in [0, 1)")
    target = -math.log1p(-u)
    if target == 0.0:
        dt = 0.0
    else:
        lo, h_lo = 0.0, 0.0
        step = 1.0 / f.bound
        hi = step
        while True:
            hi = min(hi, horizon)
            h_hi = h_lo + integrated_rate(f, _flow_raw(s, lo), hi - lo)
            if h_hi >= target:
                break
            if hi >= horizon:
                return Censored(horizon), None
            lo, h_lo = hi, h_hi
            step *= 2.0
            hi = lo + step
        base = _flow_raw(s, lo)
        dt = optimize.brentq(
            lambda z: h_lo + integrated_rate(f, base, z - lo) - target,
            lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
        )
    if u_kind is None:
        return dt, None
    at = _flow_raw(s, dt)
    lam = arrival_rate(f, at)
    tot = lam + service_rate(f, at)
    kind = EventKind.ARRIVAL if u_kind * tot < lam else EventKind.SERVICE_END
    return dt, kind


def _flow_raw(s: StateX, dt: float) -> StateX:
    busy = 1.0 if s.n > 0 else 0.0
    return StateX(s.n, s.x + busy * dt, s.y + dt)


# --------------------------------------------------------------------------
# paths


def _apply(s: StateX, dt: float, kind: EventKind) -> StateX:
    before = _flow_raw(s, dt)
    return jump_up(before) if kind is EventKind.ARRIVAL else jump_down(before)


def simulate_path(f: IntensityField, s0: StateX, horizon: float, seed: SeedSpec,
                  sampler: str = "thinning", max_events: int = 10**8) -> Trajectory:
    """Simulate one path on ``[0, horizon]``; deterministic given ``seed``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    s0 = StateX.of(s0)
    if sampler == "thinning":
        rows = kernels.simulate_events(
            f.kernel_model, s0.n, s0.x, s0.y, horizon, seed.bit_generator(), max_events
        )
        events = tuple(
            PathEvent(float(r[0]), EventKind(int(r[1])), StateX(int(r[2]), float(r[3]), float(r[4])))
            for r in rows
        )
        return Trajectory(s0, events, float(horizon))
    if sampler != "inversion":
        raise ValueError(f"unknown sampler {sampler!r}")
    gen = seed.generator()
    events = []
    s, t = s0, 0.0
    while True:
        u, uk = gen.random(2)
        dt, kind = next_event_inversion(f, s, u, uk, horizon=horizon - t)
        if isinstance(dt, Censored) or t + dt > horizon:
            break
        t += dt
        s = _apply(s, dt, kind)
        events.append(PathEvent(t, kind, s))
        if len(events) > max_events:
            raise RuntimeError("event cap exceeded")
    return Trajectory(s0, tuple(events), float(horizon))


def hitting_time_tau0(f: IntensityField, s0: StateX, seed: SeedSpec, cap: float = DEFAULT_CAP):
    """First time the queue empties, or :class:`Censored` if not before ``cap``."""
    if not cap > 0:
        raise ValueError("cap must be positive")
    s0 = StateX.of(s0)
    if s0.n == 0:
        return 0.0
    taus, cens = kernels.hitting_times(f.kernel_model, s0.n, s0.x, s0.y, cap, 1, seed.bit_generator())
    return Censored(cap) if cens[0] else float(taus[0])


def hitting_time_samples(f: IntensityField, s0: StateX, count: int, seed: SeedSpec,
                         cap: float = DEFAULT_CAP, jobs: int = 1):
    """Arrays ``(tau, censored)`` for ``count`` independent paths from ``s0``."""
    s0 = StateX.of(s0)
    parts, _ = run_chunks(
        lambda size, bg: kernels.hitting_times(f.kernel_model, s0.n, s0.x, s0.y, cap, size, bg),
        count, seed, ("tau0", s0.as_tuple()), jobs,
    )
    return (np.concatenate([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]).astype(bool))


def state_samples_at(f: IntensityField, s0: StateX, t: float, count: int, seed: SeedSpec,
                     jobs: int = 1, tag="n_at") -> np.ndarray:
    """Queue lengths at time ``t`` for ``count`` independent paths from ``s0``."""
    s0 = StateX.of(s0)
    parts, _ = run_chunks(
        lambda size, bg: kernels.n_at_time(f.kernel_model, s0.n, s0.x, s0.y, t, size, bg),
        count, seed, tag, jobs,
    )
    return np.concatenate(parts)


def jump_count_samples(f: IntensityField, s0: StateX, delta: float, count: int, seed: SeedSpec,
                       jobs: int = 1):
    """Per-path numbers of (up, down) jumps on ``(0, delta]``."""
    s0 = StateX.of(s0)
    parts, _ = run_chunks(
        lambda size, bg: kernels.jump_counts(f.kernel_model, s0.n, s0.x, s0.y, delta, size, bg),
        count, seed, ("jumps", repr(delta)), jobs,
    )
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# --------------------------------------------------------------------------
# regeneration cycles


@dataclass(frozen=True)
class RegenerationCycle:
    """One excursion between successive entries into ``(1, 0, 0)``."""

    start_t: float
    end_t: float
    integrals: dict = field(default_factory=dict)
    occupation: tuple = ()

    @property
    def length(self) -> float:
        return self.end_t - self.start_t


@dataclass(frozen=True, eq=False)
class CycleSet(Sequence):
    """Array-backed collection of i.i.d. regeneration cycles.

    ``occupation[i, m]`` is the time cycle ``i`` spent with ``n = m``; the
    last column collects ``n >= levels``. ``integrals[i, j]`` is the
    integral over cycle ``i`` of ``functionals[j]``.
    """

    lengths: np.ndarray
    occupation: np.ndarray
    integrals: np.ndarray
    functionals: tuple[str, ...]
    starts: np.ndarray

    def __len__(self):
        return len(self.lengths)

    def __getitem__(self, i):
        if isinstance(i, slice):
            idx = range(len(self))[i]
            return [self[j] for j in idx]
        return RegenerationCycle(
            float(self.starts[i]),
            float(self.starts[i] + self.lengths[i]),
            {name: float(self.integrals[i, j]) for j, name in enumerate(self.functionals)},
            tuple(self.occupation[i]),
        )

    @property
    def levels(self) -> int:
        return self.occupation.shape[1] - 1

    def take(self, index) -> "CycleSet":
        index = np.asarray(index)
        return CycleSet(self.lengths[index], self.occupation[index], self.integrals[index],
                        self.functionals, self.starts[index])

    def integral_of(self, g) -> np.ndarray:
        """Per-cycle integrals of ``g`` (text or :class:`IntensityExpr`).

        Registered functionals are looked up; constants and functions of
        ``n`` alone are computed exactly from the occupation table.
        """
        e = g if isinstance(g, IntensityExpr) else IntensityExpr.parse(str(g))
        if e.text in self.functionals:
            return self.integrals[:, self.functionals.index(e.text)]
        vars_ = ex.variables(e.tree)
        if not vars_:
            return ex.evaluate(e.tree, 0, 0, 0) * self.lengths
        if vars_ == {"n"}:
            if np.any(self.occupation[:, -1] > 0):
                raise ValueError(
                    f"functional {e.text!r} needs n beyond the occupation table "
                    f"({self.levels}); register it with collect_cycles"
                )
            vals = ex.evaluate_array(e.tree, np.arange(self.levels + 1), 0.0, 0.0)
            return self.occupation @ vals
        raise KeyError(f"functional {e.text!r} was not registered when collecting cycles")


def collect_cycles(f: IntensityField, warmup_cycles: int, num_cycles: int, functionals=(),
                   seed: SeedSpec | None = None, levels: int = 64,
                   max_cycle_length: float = DEFAULT_CAP, jobs: int = 1,
                   chunk: int = CHUNK_SIZE, check_conditions: bool = True) -> CycleSet:
    """Collect ``num_cycles`` i.i.d. regeneration cycles.

    Cycles are produced in fixed chunks, each from its own stream and each
    started at ``(1, 0, 0)`` with ``warmup_cycles`` discarded. Integrals
    of the functionals are computed segment by segment along the
    piecewise-linear path with adaptive Gauss-Kronrod quadrature (exact up
    to rounding for polynomials of degree below 23).
    """
    if seed is None:
        raise ValueError("a SeedSpec is required")
    if check_conditions and not validate_conditions(f).idle_arrival_ok:
        raise ValueError("idle arrival rate is not bounded away from zero; cycles may never close")
    exprs = [g if isinstance(g, IntensityExpr) else IntensityExpr.parse(str(g)) for g in functionals]
    programs = [e.program for e in exprs]
    parts, _ = run_chunks(
        lambda size, bg: kernels.cycles(f.kernel_model, warmup_cycles, size, levels, programs,
                                        max_cycle_length, bg),
        num_cycles, seed, "cycles", jobs, chunk,
    )
    lengths = np.concatenate([p[0] for p in parts])
    starts = np.concatenate([np.concatenate(([0.0], np.cumsum(p[0])[:-1])) for p in parts])
    return CycleSet(
        lengths,
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]) if exprs else np.zeros((len(lengths), 0)),
        tuple(e.text for e in exprs),
        starts,
    )


