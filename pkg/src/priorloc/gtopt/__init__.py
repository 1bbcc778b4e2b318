"""Joint trajectory optimization for reference-pose generation.

Combines self-localization / visual-odometry reprojection terms, IMU
preintegration factors, planar RTK position priors, and gravity-direction
priors into one damped nonlinear least-squares problem, plus the rigid
map alignment used to register two metric reconstructions.
"""

from .align import AlignResult, icp_align, rigid_align
from .imu import ImuPreintegration, imu_residual, preintegrate
from .io import load_problem, save_problem
from .problem import (
    FrameState,
    ResidualWeights,
    TrajectoryProblem,
    build_residuals,
    total_cost,
)
from .solver import SolveOptions, SolveReport, solve
from .synth import synthesize_trajectory_problem
from .tum import ate_rmse, load_tum, rotation_errors_deg, save_tum

__all__ = [
    "AlignResult",
    "FrameState",
    "ImuPreintegration",
    "ResidualWeights",
    "SolveOptions",
    "SolveReport",
    "TrajectoryProblem",
    "ate_rmse",
    "build_residuals",
    "icp_align",
    "imu_residual",
    "load_problem",
    "load_tum",
    "save_problem",
    "preintegrate",
    "rigid_align",
    "rotation_errors_deg",
    "save_tum",
    "solve",
    "synthesize_trajectory_problem",
    "total_cost",
]
