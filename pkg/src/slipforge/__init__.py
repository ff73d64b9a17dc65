"""Two-timescale tracking control of a slipping car with learned tyre parameters."""

from slipforge.estimator import EstimatorConfig, Sample, SampleSet, loss, predict_y, update
from slipforge.inversion import InputLimits, force_to_input, invert_front, invert_rear
from slipforge.model import (
    ControlInput,
    FullState,
    TyreParams,
    VehicleParams,
    kinematics,
    magic_formula,
    normal_forces,
    slip_ratios,
    state_derivative,
)
from slipforge.mpc import BodyMpc, BodyState, ForceCommand, MpcConfig, solve_mpc
from slipforge.sim import SimConfig, jacobian, rk4_step, step_interval
from slipforge.trials import (
    CourseSpec,
    TaskConfig,
    generate_reference,
    run_episode,
    run_trials,
    two_corner_course,
)

__version__ = "0.1.0"

__all__ = [
    "BodyMpc", "BodyState", "ControlInput", "CourseSpec", "EstimatorConfig", "ForceCommand",
    "FullState", "InputLimits", "MpcConfig", "Sample", "SampleSet", "SimConfig", "TaskConfig",
    "TyreParams", "VehicleParams", "force_to_input", "generate_reference", "invert_front",
    "invert_rear", "jacobian", "kinematics", "loss", "magic_formula", "normal_forces",
    "predict_y", "rk4_step", "run_episode", "run_trials", "slip_ratios", "solve_mpc",
    "state_derivative", "step_interval", "two_corner_course", "update",
]
