"""Queue states and their deterministic dynamics."""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "StateX",
    "REGENERATION_STATE",
    "jump_up",
    "jump_down",
    "flow",
    "lyapunov_L",
    "lyapunov_Lkm",
]


@dataclass(frozen=True)
class StateX:
    """State ``(n, x, y)``.

    ``n`` is the number of customers in the system, ``x`` the elapsed
    service time of the customer being served and ``y`` the time since the
    arrival clock was last reset (it resets at every arrival). An empty
    system carries ``x = 0``.
    """

    n: int
    x: float = 0.0
    y: float = 0.0

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 0:
            raise ValueError(f"n must be a nonnegative integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (self.x >= 0 and self.y >= 0 and math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"x and y must be finite and nonnegative, got ({self.x}, {self.y})")
        if self.n == 0 and self.x != 0:
            raise ValueError("an empty system must have x = 0")

    def as_tuple(self) -> tuple[int, float, float]:
        return (self.n, self.x, self.y)

    @classmethod
    def of(cls, value) -> "StateX":
        if isinstance(value, StateX):
            return value
        return cls(*value)


REGENERATION_STATE = StateX(1, 0.0, 0.0)


def jump_up(s: StateX) -> StateX:
    """Arrival: ``(n+1, x, 0)``."""
    return StateX(s.n + 1, s.x, 0.0)


def jump_down(s: StateX) -> StateX:
    """Service completion: ``(max(n-1, 0), 0, y)``."""
    return StateX(max(s.n - 1, 0), 0.0, s.y)


def flow(s: StateX, dt: float) -> StateX:
    """Deterministic motion between jumps; ``x`` is frozen while idle."""
    if dt < 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    busy = 1.0 if s.n > 0 else 0.0
    return StateX(s.n, s.x + busy * dt, s.y + dt)


def lyapunov_L(s: StateX, m: int) -> float:
    """``(n + 1 + x + y) ** m``."""
    if m < 1:
        raise ValueError("m must be a positive integer")
    return (s.n + 1 + s.x + s.y) ** m


def lyapunov_Lkm(t: float, s: StateX, k: int, m: int) -> float:
    """Time-weighted Lyapunov function ``(1 + t) ** k * L_m(s)``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if k < 1:
        raise ValueError("k must be a positive integer")
    return (1.0 + t) ** k * lyapunov_L(s, m)
