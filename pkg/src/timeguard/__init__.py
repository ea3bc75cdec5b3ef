"""Heartbeat-based timeline-integrity detection with a deterministic cloud simulator."""

from .controller import CheckConfig, CloudController, DetectionVerdict, VerdictKind
from .core_time import (
    TamperAction,
    TimelineEntry,
    TimelineViolation,
    ValidationMode,
    ViolationReason,
    VirtualClock,
    clock_read,
    clock_tamper,
    validate_timeline,
)
from .simnet import LinkModel, SimulationModel
from .world import CloudWorld, WorldParams

__version__ = "0.1.0"

__all__ = [
    "CheckConfig",
    "CloudController",
    "CloudWorld",
    "DetectionVerdict",
    "LinkModel",
    "SimulationModel",
    "TamperAction",
    "TimelineEntry",
    "TimelineViolation",
    "ValidationMode",
    "VerdictKind",
    "ViolationReason",
    "VirtualClock",
    "WorldParams",
    "clock_read",
    "clock_tamper",
    "validate_timeline",
]
