"""Simulation and statistical checks for a single-server queue whose arrival
and service intensities depend on the queue length, the elapsed service time
and the time since the last arrival."""

__version__ = "0.1.0"

from ._backend import BACKEND
from ._errors import (
    BoundViolationError,
    CycleCapExceeded,
    EventCapExceeded,
    IntensityDomainError,
    SimulationError,
    StallError,
)
from .estimators import *  # noqa: F401,F403
from .intensity import *  # noqa: F401,F403
from .oracles import *  # noqa: F401,F403
from .rng import SeedSpec, record_streams
from .simulate import *  # noqa: F401,F403
from .state import *  # noqa: F401,F403
