"""Gradient clock synchronization in dynamic networks: simulator and metrics."""

from .core_time import RESOLUTION, ContractViolation, from_fixed, to_fixed
from .scenario import InvalidScenario, Link, Probe, Scenario
from .sim_engine import InvariantViolation, Simulator, Trace, run

__all__ = [
    "RESOLUTION",
    "ContractViolation",
    "InvalidScenario",
    "InvariantViolation",
    "Link",
    "Probe",
    "Scenario",
    "Simulator",
    "Trace",
    "from_fixed",
    "run",
    "to_fixed",
]
