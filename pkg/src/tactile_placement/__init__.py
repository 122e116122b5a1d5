"""Tactile sensor placement study for in-hand object reorientation.

A desk-scale stack: articulated hand + penalty-contact physics with 19
per-region force/torque channels, a goal-conditioned reorientation
environment, a recurrent PPO learner, balanced sensor-configuration
sweeps, and region-importance analysis/reporting.
"""

__version__ = "0.1.0"

from .regions import Region, REGIONS, region_by_name
from .hand import HandModel, build_hand, apply_coupling, forward_kinematics
from .objects import ObjectSpec, make_object
from .sim import PhysicsParams, SimState, Simulation
from .env import (
    RewardParams,
    TaskGoal,
    StepResult,
    ReorientEnv,
    VectorEnv,
    orientation_error,
    compute_reward,
)
from .experiments import SensorConfiguration, ExperimentSpec

__all__ = [
    "Region",
    "REGIONS",
    "region_by_name",
    "HandModel",
    "build_hand",
    "apply_coupling",
    "forward_kinematics",
    "ObjectSpec",
    "make_object",
    "PhysicsParams",
    "SimState",
    "Simulation",
    "RewardParams",
    "TaskGoal",
    "StepResult",
    "ReorientEnv",
    "VectorEnv",
    "orientation_error",
    "compute_reward",
    "SensorConfiguration",
    "ExperimentSpec",
    "__version__",
]
