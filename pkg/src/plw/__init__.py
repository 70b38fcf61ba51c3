"""Relaxed projection Landweber methods for nonlinear ill-posed problems."""
from .elliptic import (EllipticOperator, EllipticSetup, adjoint_gradient, build_problem,
                       doping_postprocess, dtn_forward, make_initial_guess, make_phantom,
                       make_setup, solve_state)
from .errors import (ConfigError, ContractViolation, DimensionError, DomainError,
                     EstimationError, IterateEscaped, PLWError, SolverError)
from .harness import (ExperimentConfig, NoisySample, inject_noise, load_config, noise_sweep,
                      parse_config, run_experiment)
from .methods import (History, IterationRecord, MethodSpec, StoppingRule, finiteness_bound,
                      lambda_exact, monotonicity_check, p_delta, run_iteration,
                      separation_gap_exact, separation_gap_noisy, step_family,
                      summability_sum, theta_schedule)
from .operators import (ForwardOperator, adjoint_dot_test, estimate_tcc_eta,
                        make_diagonal_linear, make_quadratic_perturbation)
from .spaces import (BoundaryTrace, Grid2D, GridFunction, boundary_inner_l2, inner_h1,
                     inner_l2, riesz_h1)

__version__ = "0.1.0"
