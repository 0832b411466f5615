"""Simulation and certification toolkit for spacing-policy adaptive cruise control.

The package models a string of vehicles where each follower accelerates
according to a gap-dependent feedback law built around a spacing gain g(s)
and its integral, the equilibrium speed curve.  It provides:

* spacing-policy construction and validation (`spacing`)
* follower control laws, linear and nonlinear (`controllers`)
* fixed-step RK4 platoon integration on open and ring roads (`simulation`)
* safe-set membership, barrier monitoring and invariance studies (`safety`)
* string-stability / Lyapunov / flow-theory certificates (`analysis`)
* scenario library, config files and a command line front end
  (`scenarios`, `config`, `cli`)
"""

from .spacing import (
    RampPlateauPolicy,
    TabulatedPolicy,
    cyclic_difference_min_eigenvalue,
    check_gain_conditions,
    check_general_conditions,
    check_ring_sector_condition,
)
from .controllers import (
    NonlinearGapController,
    GeneralGapController,
    ConstantTimeGapController,
    InvalidPolicyError,
)
from .simulation import (
    PlatoonState,
    Trajectory,
    ConstantProfile,
    ExpApproachProfile,
    PiecewiseExpProfile,
    InterpolatedProfile,
    NonFiniteStateError,
    check_leader_admissible,
    platoon_rhs,
    rk4_step,
    simulate,
)
from .safety import (
    SafetyParams,
    SafetyReport,
    Violation,
    BoundaryError,
    barrier,
    barrier_bound,
    in_safe_set,
    safe_set_slacks,
    monitor_trajectory,
    write_slack_csv,
    sample_safe_states,
    sample_safe_ring_states,
    InvarianceReport,
    run_invariance_study,
)
from .analysis import (
    CheckReport,
    StringStabilityParams,
    LyapunovConfig,
    RegularityWarning,
    storage_function,
    l2_string_check,
    g_manifold_l2_check,
    linf_string_check,
    manifold_contraction_check,
    cascade_weights,
    lyapunov_open_road,
    lyapunov_ring,
    jacobian_eigencheck,
    fundamental_diagram,
    macroscopic_stability_check,
)
from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .scenarios import BUILTIN_NAMES, builtin_config, expectations_for, run_config
from .csvio import read_trajectory_csv, write_trajectory_csv

__all__ = [
    "RampPlateauPolicy",
    "TabulatedPolicy",
    "cyclic_difference_min_eigenvalue",
    "check_gain_conditions",
    "check_general_conditions",
    "check_ring_sector_condition",
    "NonlinearGapController",
    "GeneralGapController",
    "ConstantTimeGapController",
    "InvalidPolicyError",
    "PlatoonState",
    "Trajectory",
    "ConstantProfile",
    "ExpApproachProfile",
    "PiecewiseExpProfile",
    "InterpolatedProfile",
    "NonFiniteStateError",
    "check_leader_admissible",
    "platoon_rhs",
    "rk4_step",
    "simulate",
    "SafetyParams",
    "SafetyReport",
    "Violation",
    "BoundaryError",
    "barrier",
    "barrier_bound",
    "in_safe_set",
    "safe_set_slacks",
    "monitor_trajectory",
    "write_slack_csv",
    "sample_safe_states",
    "sample_safe_ring_states",
    "InvarianceReport",
    "run_invariance_study",
    "CheckReport",
    "StringStabilityParams",
    "LyapunovConfig",
    "RegularityWarning",
    "storage_function",
    "l2_string_check",
    "g_manifold_l2_check",
    "linf_string_check",
    "manifold_contraction_check",
    "cascade_weights",
    "lyapunov_open_road",
    "lyapunov_ring",
    "jacobian_eigencheck",
    "fundamental_diagram",
    "macroscopic_stability_check",
    "ConfigError",
    "ScenarioConfig",
    "load_config",
    "parse_config",
    "BUILTIN_NAMES",
    "builtin_config",
    "expectations_for",
    "run_config",
    "read_trajectory_csv",
    "write_trajectory_csv",
]

__version__ = "0.1.0"
