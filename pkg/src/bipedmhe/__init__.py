"""Ground-reaction-force and floating-base state estimation for a planar biped.

The package bundles a rigid-body model of a point-foot biped, a contact
simulator that doubles as the sensor generator, a moving-horizon estimator
built on a sparse ADMM quadratic-program solver, and two reference
estimators (a Kalman filter and a momentum-based observer) together with a
benchmark harness that scores all of them against simulated ground truth.
"""

from .model import (
    GeneralizedState,
    LegModel,
    LinkParams,
    ModelError,
    RobotModel,
    default_model,
    load_robot_model,
    save_robot_model,
)

__all__ = [
    "GeneralizedState",
    "LegModel",
    "LinkParams",
    "ModelError",
    "RobotModel",
    "default_model",
    "load_robot_model",
    "save_robot_model",
]

__version__ = "0.1.0"
