from .model import (
    KinematicModel,
    Link,
    TargetFrame,
    exp_so3,
    log_so3,
    quadruped_model,
    random_tree,
    read_model,
    right_jacobian_so3,
    write_model,
)
from .solver import (
    MocapSequence,
    RetargetProblem,
    SolveReport,
    read_mocap,
    resample,
    retarget_sequence,
    solve_frame,
    summarize,
    write_mocap,
)

__all__ = [
    "KinematicModel",
    "Link",
    "TargetFrame",
    "exp_so3",
    "log_so3",
    "quadruped_model",
    "random_tree",
    "read_model",
    "right_jacobian_so3",
    "write_model",
    "MocapSequence",
    "RetargetProblem",
    "SolveReport",
    "read_mocap",
    "resample",
    "retarget_sequence",
    "solve_frame",
    "summarize",
    "write_mocap",
]
