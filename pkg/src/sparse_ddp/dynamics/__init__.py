"""System models: cartpole, thruster-actuated satellite, planar reaching arm."""

from .arm import ArmModel
from .base import DynamicsError, SecondOrderModel, StepJacobians, SystemModel
from .cartpole import CartpoleModel
from .satellite import SatelliteModel, ThrusterTable, box_inertia, build_thruster_table


def step(model: SystemModel, x, u):
    return model.step(x, u)


def jacobians(model: SystemModel, x, u, mode: str = "analytic") -> StepJacobians:
    return model.jacobians(x, u, mode)


def state_diff(model: SystemModel, x1, x0):
    return model.state_diff(x1, x0)


__all__ = [
    "ArmModel", "CartpoleModel", "DynamicsError", "SatelliteModel", "SecondOrderModel",
    "StepJacobians", "SystemModel", "ThrusterTable", "box_inertia", "build_thruster_table",
    "jacobians", "state_diff", "step",
]
