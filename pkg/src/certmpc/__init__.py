"""Certified fixed-iteration first-order MPC."""
from .errors import *  # noqa: F401,F403
from .model import (CondensedQp, LtiModel, MpcSpec, condense, eval_cost,
                    eval_gradient, eval_value, solve_dare)
from .solvers import (AdmmState, SolverRun, StopPolicy, StopReason, admm_solve,
                      oracle_solve, pgdm_solve, project_box)
from .certify import (Certificate, certify, compute_m_bar, compute_m_bar_quadratic,
                      estimate_gamma, kappa_admm, kappa_pgdm)
from .simulate import (ClosedLoopTrace, Controller, iteration_reduction, run_closed_loop,
                       step_plant, sweep_initial_conditions)

__version__ = "0.1.0"
