"""Closed-form reference values used to validate the simulator."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .intensity import IntensityExpr

__all__ = [
    "UnstableQueueError",
    "MM1Params",
    "ServiceLaw",
    "mm1_stationary",
    "mm1_busy_period_mean",
    "mm1_mean_number",
    "pk_mean_number",
    "hazard_of",
]


class UnstableQueueError(ValueError):
    """The requested stationary quantity does not exist (load >= 1)."""


@dataclass(frozen=True)
class MM1Params:
    lam: float
    mu: float

    def __post_init__(self):
        if self.lam < 0 or self.mu <= 0:
            raise ValueError("need lam >= 0 and mu > 0")

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    @property
    def stable(self) -> bool:
        return self.rho < 1

    def _require_stable(self):
        if not self.stable:
            raise UnstableQueueError(f"load rho = {self.rho:g} >= 1")


def mm1_stationary(p: MM1Params, m: int) -> float:
    """Stationary probability of ``m`` customers, ``(1 - rho) rho^m``."""
    p._require_stable()
    if m < 0:
        raise ValueError("m must be nonnegative")
    return (1.0 - p.rho) * p.rho**m


def mm1_busy_period_mean(p: MM1Params) -> float:
    p._require_stable()
    return 1.0 / (p.mu - p.lam)


def mm1_mean_number(p: MM1Params) -> float:
    p._require_stable()
    return p.rho / (1.0 - p.rho)


@dataclass(frozen=True)
class ServiceLaw:
    """Service-time distribution given by its family.

    ``family`` is ``"exponential"`` (params: rate), ``"erlang"`` (shape,
    rate) or ``"pareto_hazard"`` (c0), the last having hazard
    ``c0 / (1 + x)`` and survival ``(1 + x) ** -c0``.
    """

    family: str
    params: tuple

    @classmethod
    def exponential(cls, rate: float) -> "ServiceLaw":
        return cls("exponential", (float(rate),))

    @classmethod
    def erlang(cls, shape: int, rate: float) -> "ServiceLaw":
        if int(shape) != shape or shape < 1:
            raise ValueError("Erlang shape must be a positive integer")
        return cls("erlang", (int(shape), float(rate)))

    @classmethod
    def pareto_hazard(cls, c0: float) -> "ServiceLaw":
        return cls("pareto_hazard", (float(c0),))

    def __post_init__(self):
        if self.family not in ("exponential", "erlang", "pareto_hazard"):
            raise ValueError(f"unknown service family {self.family!r}")
        if any(p <= 0 for p in self.params):
            raise ValueError("service parameters must be positive")

    @property
    def mean(self) -> float:
        if self.family == "exponential":
            return 1.0 / self.params[0]
        if self.family == "erlang":
            k, nu = self.params
            return k / nu
        c0 = self.params[0]
        return 1.0 / (c0 - 1.0) if c0 > 1 else math.inf

    @property
    def scv(self) -> float:
        """Squared coefficient of variation."""
        if self.family == "exponential":
            return 1.0
        if self.family == "erlang":
            return 1.0 / self.params[0]
        c0 = self.params[0]
        # E S^2 = 2 / ((c0 - 1)(c0 - 2)) for c0 > 2
        return c0 / (c0 - 2.0) if c0 > 2 else math.inf

    def survival(self, x: float) -> float:
        if self.family == "exponential":
            return math.exp(-self.params[0] * x)
        if self.family == "erlang":
            k, nu = self.params
            z = nu * x
            return math.exp(-z) * sum(z**j / math.factorial(j) for j in range(k))
        return (1.0 + x) ** (-self.params[0])


def pk_mean_number(lam: float, s: ServiceLaw) -> float:
    """Mean number in an M/G/1 system (Pollaczek-Khinchine)."""
    rho = lam * s.mean
    if not rho < 1:
        raise UnstableQueueError(f"load rho = {rho:g} >= 1")
    return rho + rho**2 * (1.0 + s.scv) / (2.0 * (1.0 - rho))


def hazard_of(s: ServiceLaw) -> IntensityExpr:
    """Service hazard as an expression in the elapsed service time ``x``."""
    if s.family == "exponential":
        text = repr(s.params[0])
    elif s.family == "erlang":
        k, nu = s.params
        if k == 1:
            text = repr(nu)
        elif k == 2:
            text = f"{nu!r}^2*x/(1+{nu!r}*x)"
        else:
            terms = " + ".join(
                f"({nu!r}*x)^{j}/{math.factorial(j)}" for j in range(1, k)
            )
            text = f"{nu!r}*({nu!r}*x)^{k - 1}/{math.factorial(k - 1)} / (1 + {terms})"
    else:
        text = f"{s.params[0]!r}/(1+x)"
    return IntensityExpr.parse(text)
