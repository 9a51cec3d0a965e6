"""Intensity fields, hazard formulas, the generator and condition checks."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

from . import expr as ex
from ._errors import IntensityDomainError
from .state import StateX, jump_down, jump_up

__all__ = [
    "IntensityExpr",
    "IntensityField",
    "TestFunction",
    "GridSpec",
    "ConditionReport",
    "QuadratureError",
    "parse_intensity",
    "eval_intensity",
    "arrival_rate",
    "service_rate",
    "total_hazard",
    "integrated_rate",
    "survival_probability",
    "event_density",
    "generator_apply",
    "time_generator_apply",
    "validate_conditions",
    "lyapunov_text",
    "truncate_text",
]

QUAD_ABS = 1e-10
QUAD_REL = 1e-8


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True, eq=False)
class IntensityExpr:
    """A parsed expression in the state variables (and optionally ``t``)."""

    tree: ex.Expr
    allow_time: bool = False

    @classmethod
    def parse(cls, text: str, allow_time: bool = False) -> "IntensityExpr":
        return cls(ex.parse(text, allow_time=allow_time), allow_time)

    @cached_property
    def text(self) -> str:
        return ex.to_text(self.tree)

    @cached_property
    def program(self) -> ex.Program:
        return ex.compile_program(self.tree)

    @cached_property
    def guards(self) -> list[ex.Expr]:
        return ex.affine_guards(self.tree)

    def partial(self, var: str) -> "IntensityExpr":
        return IntensityExpr(ex.diff(self.tree, var), self.allow_time)

    def __call__(self, n, x, y, t=0.0) -> float:
        return ex.evaluate(self.tree, n, x, y, t)

    def __eq__(self, other):
        return isinstance(other, IntensityExpr) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    def __repr__(self):
        return f"IntensityExpr({self.text!r})"


def parse_intensity(text: str) -> IntensityExpr:
    return IntensityExpr.parse(text)


def eval_intensity(e: IntensityExpr, s: StateX) -> float:
    """Evaluate an intensity; negative or non-finite values are errors."""
    v = e(s.n, s.x, s.y)
    if not (v >= 0 and math.isfinite(v)):
        raise IntensityDomainError(
            f"{e.text} evaluates to {v!r} at state {s.as_tuple()}", s.as_tuple(), v
        )
    return v


def _as_expr(value, allow_time=False) -> IntensityExpr:
    if isinstance(value, IntensityExpr):
        return value
    if isinstance(value, (int, float)):
        value = repr(float(value))
    return IntensityExpr.parse(value, allow_time=allow_time)


@dataclass(frozen=True)
class KernelModel:
    """Flat view of a field handed to the simulation kernels."""

    lam: ex.Program
    lam0: ex.Program
    h: ex.Program
    bound: float
    guards: tuple
    max_proposals: int = 10**9


@dataclass(frozen=True, eq=False)
class IntensityField:
    """Arrival intensity ``lam``, service intensity ``h`` and idle arrival
    rate ``lam0(y)``, with declared bounds ``lambda_sup`` and ``h_sup``.

    When the system is empty the arrival rate is ``lam0(y)`` and the
    service intensity is zero whatever ``h`` evaluates to. If ``lam0`` is
    omitted it defaults to ``lam`` with ``n = x = 0`` substituted.
    """

    lam: IntensityExpr
    h: IntensityExpr
    lam0: IntensityExpr
    lambda_sup: float
    h_sup: float

    def __post_init__(self):
        if not (self.lambda_sup > 0 and self.h_sup > 0):
            raise ValueError("lambda_sup and h_sup must be positive")
        if not math.isfinite(self.lambda_sup + self.h_sup):
            raise ValueError("intensity bounds must be finite")
        if ex.variables(self.lam0.tree) - {"y"}:
            raise ValueError(f"lambda0 may only depend on y, got {self.lam0.text!r}")

    @classmethod
    def from_strings(cls, lam, h, lam0=None, lambda_sup=None, h_sup=None) -> "IntensityField":
        lam_e = _as_expr(lam)
        h_e = _as_expr(h)
        if lam0 is None:
            lam0_e = IntensityExpr(ex.simplify(ex.substitute(lam_e.tree, n=0.0, x=0.0)))
        else:
            lam0_e = _as_expr(lam0)
        if lambda_sup is None or h_sup is None:
            raise ValueError("declared bounds lambda_sup and h_sup are required")
        return cls(lam_e, h_e, lam0_e, float(lambda_sup), float(h_sup))

    @property
    def bound(self) -> float:
        return self.lambda_sup + self.h_sup

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam.text,
            "h": self.h.text,
            "lambda0": self.lam0.text,
            "lambda_sup": self.lambda_sup,
            "h_sup": self.h_sup,
        }

    @cached_property
    def kernel_model(self) -> KernelModel:
        guards = []
        for e in (self.lam, self.h, self.lam0):
            for g in e.guards:
                if g not in guards:
                    guards.append(g)
        return KernelModel(
            self.lam.program,
            self.lam0.program,
            self.h.program,
            self.bound,
            tuple(ex.compile_program(g) for g in guards),
        )

    def breakpoints(self, s: StateX, delta: float) -> list[float]:
        """Times in (0, delta) where an affine guard of the field switches
        along the flow from ``s``."""
        busy = 1.0 if s.n > 0 else 0.0
        out = set()
        for e in (self.lam, self.h, self.lam0):
            for g in e.guards:
                g0 = ex.evaluate(g, s.n, s.x, s.y)
                g1 = ex.evaluate(g, s.n, s.x + busy, s.y + 1.0)
                if g1 != g0:
                    r = -g0 / (g1 - g0)
                    if 0.0 < r < delta:
                        out.add(r)
        return sorted(out)


def arrival_rate(f: IntensityField, s: StateX) -> float:
    if s.n == 0:
        return eval_intensity(f.lam0, StateX(0, 0.0, s.y))
    return eval_intensity(f.lam, s)


def service_rate(f: IntensityField, s: StateX) -> float:
    if s.n == 0:
        return 0.0
    return eval_intensity(f.h, s)


def total_hazard(f: IntensityField, s: StateX) -> float:
    """``lambda(s) + h(s)``; reduces to ``lambda0(y)`` when the system is empty."""
    return arrival_rate(f, s) + service_rate(f, s)


def _flowed(s: StateX, u: float) -> StateX:
    busy = 1.0 if s.n > 0 else 0.0
    return StateX(s.n, s.x + busy * u, s.y + u)


def _channel_fn(f: IntensityField, s: StateX, channel: str):
    """Intensity of a channel along the flow from ``s`` as a function of elapsed time."""
    n, x, y = float(s.n), s.x, s.y
    if channel not in ("arrival", "service", "total"):
        raise ValueError(f"unknown channel {channel!r}")

    def checked(e, n_, x_, y_):
        v = ex.evaluate(e.tree, n_, x_, y_)
        if not (v >= 0 and math.isfinite(v)):
            raise IntensityDomainError(f"{e.text} evaluates to {v!r} at {(n_, x_, y_)}", (n_, x_, y_), v)
        return v

    if s.n == 0:
        if channel == "service":
            return lambda u: 0.0
        return lambda u: checked(f.lam0, 0.0, 0.0, y + u)
    if channel == "arrival":
        return lambda u: checked(f.lam, n, x + u, y + u)
    if channel == "service":
        return lambda u: checked(f.h, n, x + u, y + u)
    return lambda u: checked(f.lam, n, x + u, y + u) + checked(f.h, n, x + u, y + u)


def integrated_rate(f: IntensityField, s: StateX, delta: float, channel: str = "total") -> float:
    """Integral of a channel's intensity along the flow from ``s`` over ``[0, delta]``.

    Adaptive quadrature (absolute tolerance 1e-10, relative 1e-8), split
    at guard switching points so discontinuous intensities integrate
    accurately.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta == 0:
        return 0.0
    rate = _channel_fn(f, s, channel)
    edges = [0.0, *f.breakpoints(s, delta), float(delta)]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err, info = integrate.quad(
                rate, a, b,
                epsabs=QUAD_ABS, epsrel=QUAD_REL, limit=200, full_output=True,
            )[:3]
        if err > max(QUAD_ABS, QUAD_REL * abs(val)) * 10:
            raise QuadratureError(
                f"integrated {channel} intensity did not converge on [{a}, {b}] "
                f"from state {s.as_tuple()} (error estimate {err:g})"
            )
        total += val
    return total


def survival_probability(f: IntensityField, s: StateX, delta: float) -> float:
    """Probability of no jump on ``(0, delta]`` starting from ``s``."""
    return math.exp(-integrated_rate(f, s, delta))


def event_density(f: IntensityField, s: StateX, z: float) -> float:
    """Density at ``z`` of the time to the next jump (either kind)."""
    if z < 0:
        raise ValueError("z must be nonnegative")
    return total_hazard(f, _flowed(s, z)) * survival_probability(f, s, z)


# --------------------------------------------------------------------------
# test functions and the generator


class TestFunction:
    """A function of ``(t, n, x, y)`` with its partials in ``t``, ``x``, ``y``.

    Built from an expression, the partials are exact symbolic derivatives.
    Use :meth:`finite_difference` for a central-difference variant.
    """

    __test__ = False  # not a pytest class

    def __init__(self, value, dx, dy, dt=None, text: str | None = None):
        self._value = value
        self._dx = dx
        self._dy = dy
        self._dt = dt if dt is not None else (lambda s, t=0.0: 0.0)
        self.text = text

    @classmethod
    def from_text(cls, text: str) -> "TestFunction":
        e = IntensityExpr.parse(text, allow_time=True)
        dx, dy, dt = (e.partial(v) for v in ("x", "y", "t"))
        obj = cls(
            lambda s, t=0.0: e(s.n, s.x, s.y, t),
            lambda s, t=0.0: dx(s.n, s.x, s.y, t),
            lambda s, t=0.0: dy(s.n, s.x, s.y, t),
            lambda s, t=0.0: dt(s.n, s.x, s.y, t),
            text=e.text,
        )
        obj.expr = e
        return obj

    @classmethod
    def finite_difference(cls, value, step: float = 1e-6, text=None) -> "TestFunction":
        """Partials by central differences (one-sided at the x = 0 / y = 0 / t = 0 edges)."""

        def partial(which):
            def d(s, t=0.0):
                def at(delta):
                    if which == "x":
                        return value(StateX(s.n, s.x + delta, s.y), t)
                    if which == "y":
                        return value(StateX(s.n, s.x, s.y + delta), t)
                    return value(s, t + delta)

                base = {"x": s.x, "y": s.y, "t": t}[which]
                if which == "x" and s.n == 0:
                    return 0.0
                if base >= step:
                    return (at(step) - at(-step)) / (2 * step)
                return (at(step) - at(0.0)) / step

            return d

        return cls(value, partial("x"), partial("y"), partial("t"), text=text)

    def __call__(self, s: StateX, t: float = 0.0) -> float:
        return self._value(s, t)

    def dx(self, s: StateX, t: float = 0.0) -> float:
        return self._dx(s, t)

    def dy(self, s: StateX, t: float = 0.0) -> float:
        return self._dy(s, t)

    def dt(self, s: StateX, t: float = 0.0) -> float:
        return self._dt(s, t)


def generator_apply(f: IntensityField, s: StateX, fn: TestFunction, t: float = 0.0) -> float:
    """Generator of the process applied to ``fn`` at ``s`` (at time ``t``
    for time-dependent test functions, without the time derivative)."""
    busy = 1.0 if s.n > 0 else 0.0
    here = fn(s, t)
    lam = arrival_rate(f, s)
    h = service_rate(f, s)
    out = busy * fn.dx(s, t) + fn.dy(s, t)
    out += lam * (fn(jump_up(s), t) - here)
    if h:
        out += h * (fn(jump_down(s), t) - here)
    return out


def time_generator_apply(f: IntensityField, s: StateX, fn: TestFunction, t: float) -> float:
    """``(d/dt + G) fn`` at ``(t, s)``."""
    return fn.dt(s, t) + generator_apply(f, s, fn, t)


def lyapunov_text(m: int, k: int = 0) -> str:
    """Expression text for ``L_m`` or, with ``k > 0``, ``L_{k,m}``."""
    base = f"(n + 1 + x + y)^{m}"
    return base if k == 0 else f"(1 + t)^{k} * {base}"


def truncate_text(text: str, cap: float = 1e3) -> str:
    """Smooth bounded version ``cap * (1 - exp(-v / cap))`` of a nonnegative
    expression ``v``; close to ``v`` well below ``cap``, bounded by it above."""
    return f"{cap!r} * (1 - exp(-({text}) / {cap!r}))"


# --------------------------------------------------------------------------
# condition validation


@dataclass(frozen=True)
class GridSpec:
    """Validation grid: ``n`` in ``0..n_max``, ``x`` and ``y`` on a grid that
    starts at ``first_step`` and widens geometrically up to ``t_max``."""

    n_max: int = 50
    t_max: float = 100.0
    first_step: float = 0.01
    growth: float = 1.1

    def axis(self) -> np.ndarray:
        pts = [0.0]
        step = self.first_step
        while pts[-1] + step < self.t_max:
            pts.append(pts[-1] + step)
            step *= self.growth
        pts.append(self.t_max)
        return np.asarray(pts)

    def describe(self) -> str:
        return (
            f"n in 0..{self.n_max}; x, y in [0, {self.t_max:g}] with {len(self.axis())} points "
            f"(first step {self.first_step:g}, geometric growth {self.growth:g})"
        )


@dataclass
class ConditionReport:
    boundedness_ok: bool
    lambda_sup_grid: float
    h_sup_grid: float
    domain_ok: bool
    c0_estimate: float
    hazard_bound_ok: bool
    lambda0_inf: float
    lambda0_sup: float
    idle_arrival_ok: bool
    lambda0_c0prime: float | None
    grid_spec: str
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.boundedness_ok and self.domain_ok and self.hazard_bound_ok and self.idle_arrival_ok

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "boundedness_ok": self.boundedness_ok,
            "lambda_sup_grid": self.lambda_sup_grid,
            "h_sup_grid": self.h_sup_grid,
            "domain_ok": self.domain_ok,
            "c0_estimate": self.c0_estimate,
            "hazard_lower_bound_ok": self.hazard_bound_ok,
            "lambda0_inf": self.lambda0_inf,
            "lambda0_sup": self.lambda0_sup,
            "idle_arrival_ok": self.idle_arrival_ok,
            "lambda0_c0prime": self.lambda0_c0prime,
            "grid": self.grid_spec,
            "messages": list(self.messages),
        }


def validate_conditions(f: IntensityField, grid: GridSpec | None = None, c0_min: float = 0.0) -> ConditionReport:
    """Check boundedness, the hazard lower bound ``h >= C0 / (1 + x)`` and
    the idle arrival rate bounds on a finite grid.

    ``c0_estimate`` is the largest ``C0`` consistent with the grid, i.e. the
    minimum of ``h * (1 + x)`` over grid points with ``n > 0``. The hazard
    condition passes when it exceeds ``c0_min``.
    """
    grid = grid or GridSpec()
    axis = grid.axis()
    ns = np.arange(1, grid.n_max + 1, dtype=np.float64)[:, None, None]
    xs = axis[None, :, None]
    ys = axis[None, None, :]
    lam = ex.evaluate_array(f.lam.tree, ns, xs, ys)
    h = ex.evaluate_array(f.h.tree, ns, xs, ys)
    lam0 = ex.evaluate_array(f.lam0.tree, 0.0, 0.0, axis)
    messages = []

    domain_ok = True
    for name, arr in (("lambda", lam), ("h", h), ("lambda0", lam0)):
        bad = ~(np.isfinite(arr) & (arr >= 0))
        if bad.any():
            domain_ok = False
            messages.append(f"{name} is negative or non-finite at {int(bad.sum())} grid points")

    lam_sup = float(np.nanmax(np.concatenate([lam.ravel(), lam0])))
    h_sup = float(np.nanmax(h))
    boundedness_ok = lam_sup <= f.lambda_sup and h_sup <= f.h_sup
    if lam_sup > f.lambda_sup:
        messages.append(f"lambda reaches {lam_sup:g} > declared lambda_sup {f.lambda_sup:g}")
    if h_sup > f.h_sup:
        messages.append(f"h reaches {h_sup:g} > declared h_sup {f.h_sup:g}")

    with np.errstate(all="ignore"):
        c0 = float(np.nanmin(h * (1.0 + xs)))
    c0 = max(c0, 0.0)
    hazard_bound_ok = c0 > c0_min
    if not hazard_bound_ok:
        messages.append(f"h * (1 + x) drops to {c0:g}; hazard lower bound requires C0 > {c0_min:g}")

    inf0 = float(np.nanmin(lam0))
    sup0 = float(np.nanmax(lam0))
    idle_arrival_ok = bool(inf0 > 0 and np.isfinite(sup0))
    if not idle_arrival_ok:
        messages.append(f"idle arrival rate inf is {inf0:g}; it must be strictly positive")
    with np.errstate(all="ignore"):
        c0p = float(np.nanmin(lam0 * (1.0 + axis)))

    return ConditionReport(
        boundedness_ok=bool(boundedness_ok),
        lambda_sup_grid=lam_sup,
        h_sup_grid=h_sup,
        domain_ok=domain_ok,
        c0_estimate=c0,
        hazard_bound_ok=bool(hazard_bound_ok),
        lambda0_inf=inf0,
        lambda0_sup=sup0,
        idle_arrival_ok=idle_arrival_ok,
        lambda0_c0prime=c0p,
        grid_spec=grid.describe(),
        messages=messages,
    )
