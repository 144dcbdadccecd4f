"""Three-phase electromagnetic transient simulation."""

from .integrate import StepFailure, integrate
from .system import (System, SystemState, TrajectoryRecord, build_system, run_period,
                     simulate, state_names)

__all__ = ["StepFailure", "System", "SystemState", "TrajectoryRecord", "build_system",
           "integrate", "run_period", "simulate", "state_names"]
