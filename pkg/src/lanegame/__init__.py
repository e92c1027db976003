"""Time/energy-optimal lane-change planning for a connected autonomous
vehicle cooperating with one CAV while interacting with one human-driven
vehicle."""

from .vehicles import (
    DisruptionWeights,
    SafetyParams,
    Trajectory,
    VehicleLimits,
    VehicleState,
    check_safety_triplet,
    disruption,
    propagate,
    safe_distance,
)

__version__ = "0.1.0"

__all__ = [
    "VehicleState",
    "VehicleLimits",
    "SafetyParams",
    "DisruptionWeights",
    "Trajectory",
    "safe_distance",
    "propagate",
    "check_safety_triplet",
    "disruption",
    "__version__",
]
