"""
Water Distribution Network DAE Package

Reads EPANET-style networks, simulates their rigid-water-column dynamics
and computes stability, controllability and sensitivity margins.
"""

from .dae_core import HydraulicDae, HydraulicState, Trajectory, detect_switch_kink
from .inp_parser import NetworkDescription, parse_inp, parse_inp_file, validate, write_inp
from .linearization import (
    LinearDaeModel,
    ReducedLinearModel,
    assemble_linear_dae,
    conductance_weights,
    incremental_energy,
    linearize,
    pencil_eigenvalues,
    reduce,
    simulate_linear,
    stability_margin,
    weighted_laplacian,
)
from .margins import (
    certified_radius,
    demand_profile_levels,
    demand_sweep,
    equilibrium_sensitivity,
    kalman_margin,
    margin_report,
    margin_robustness,
    matrix_sensitivity,
    pbh_margin,
    rank_parameters,
    reachability_authority,
    roughness_residual_sweep,
    screen_linearization,
)
from .network_model import HydraulicModel, build_model, calibrate_open_valves
from .quasi_steady import compare_trajectories, extended_period_sim, solve_wfp
from .schedule import Controls, Demands, ScheduleInput, build_schedule
from .smoothing import SmoothedSchedule, convergence_sweep, smooth_controls, smoothstep

__version__ = "0.1.0"
__all__ = [
    'NetworkDescription', 'parse_inp', 'parse_inp_file', 'validate', 'write_inp',
    'HydraulicModel', 'build_model', 'calibrate_open_valves',
    'Controls', 'Demands', 'ScheduleInput', 'build_schedule',
    'HydraulicDae', 'HydraulicState', 'Trajectory', 'detect_switch_kink',
    'SmoothedSchedule', 'smooth_controls', 'smoothstep', 'convergence_sweep',
    'LinearDaeModel', 'ReducedLinearModel', 'assemble_linear_dae', 'linearize', 'reduce',
    'weighted_laplacian', 'conductance_weights', 'incremental_energy', 'pencil_eigenvalues',
    'stability_margin', 'simulate_linear',
    'equilibrium_sensitivity', 'matrix_sensitivity', 'certified_radius', 'screen_linearization',
    'roughness_residual_sweep', 'kalman_margin', 'pbh_margin', 'reachability_authority',
    'margin_robustness', 'rank_parameters', 'demand_profile_levels', 'demand_sweep', 'margin_report',
    'solve_wfp', 'extended_period_sim', 'compare_trajectories',
]
