"""Exit probabilities, large-deviation rates and gain selection for multi-channel linear systems."""
__version__ = "0.1.0"

from .action import (ActionResult, ActionSettings, DiscretePath, QuasipotentialProfile,
                     exit_set, hamiltonian, lagrangian, minimize_action_fixed,
                     minimize_action_free, path_action, path_action_gradient,
                     penalty_terminal_cost, quasipotential_profile, rate_to_section)
from .codesign import (CodesignProblem, CodesignResult, failure_rates, nominal_value,
                       solve_codesign)
from .config import RunConfig, emit, load_config, parse_config
from .domain import BoundarySection, DomainSpec, section_membership
from .errors import *  # noqa: F401,F403
from .pde import FieldSolution, Grid1D, Grid2D, hjb_residual, log_transform, solve_exit_bvp
from .sde import (ExitEvent, ExitSample, ExitStats, SimParams, empirical_rate,
                  estimate_exit_probability, estimate_terminal_functional,
                  evaluate_exit_control_cost, exit_location_histogram, simulate_exits,
                  simulate_trajectory)
from .system import (Channel, DiffusionSpec, MultiChannelSystem, closed_loop_drift,
                     diffusion_matrix, verify_domain_attraction, verify_gain_tuple)
