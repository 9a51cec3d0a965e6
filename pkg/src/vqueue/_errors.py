"""Exceptions shared by both kernel backends."""
from __future__ import annotations


class SimulationError(RuntimeError):
    """Base class for failures detected while simulating."""


class IntensityDomainError(SimulationError, ValueError):
    """An intensity evaluated to a negative, NaN or infinite value."""

    def __init__(self, message, state=None, value=None):
        super().__init__(message)
        self.state = state
        self.value = value


class BoundViolationError(SimulationError):
    """lambda + h exceeded the declared bound LambdaSup + HSup."""


class StallError(SimulationError):
    """The thinning sampler exhausted its proposal budget."""


class CycleCapExceeded(SimulationError):
    """A regeneration cycle grew beyond its length cap (likely rho >= 1)."""


class EventCapExceeded(SimulationError):
    """A path produced more events than allowed."""


def raise_kernel_error(rc, n, x, y, value):
    state = (int(n), float(x), float(y))
    if rc == -1:
        raise StallError(f"thinning stalled at state {state} after proposals up to dt={value:g}")
    if rc == -2:
        raise BoundViolationError(
            f"total intensity {value!r} at state {state} exceeds the declared bound"
        )
    if rc == -3:
        raise IntensityDomainError(
            f"intensity is negative or non-finite ({value!r}) at state {state}", state, value
        )
    if rc == -4:
        raise CycleCapExceeded(
            f"regeneration cycle longer than {value:g} (last state {state}); "
            "the queue is probably unstable"
        )
    if rc == -5:
        raise EventCapExceeded(f"event cap exceeded at t={value:g}, state {state}")
    raise SimulationError(f"kernel failure code {rc}")
