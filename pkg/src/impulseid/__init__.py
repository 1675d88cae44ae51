"""Joint estimation of impulsive inputs and compartment rates from sampled data."""

from .errors import (BoundaryNotFoundError, ContractError, DomainError, EstimationError,
                     SolverError)
from .estimator import (EstimateResult, GridSpec, estimate_gamma_p_hat, estimate_low_noise,
                        estimate_noise_free, extract_impulses, merge_adjacent, n_g_surface)
from .model import (ImpulseTrain, SampledSignal, StateVector, SystemParams, add_noise,
                    kernel_z, simulate_ode, simulate_output)
from .montecarlo import (ExperimentConfig, ExperimentReport, distance_to_curve,
                         generate_realization, match_impulses, run_experiment)
from .regions import (BoundaryCurve, Label, RegionMap, boundary_equidistant,
                      boundary_triplet_numeric, classify_point, sweep_region_map,
                      trace_boundary)
from .regressor import build_phi, predict
from .solvers import LsSolution, residual_g, solve_nnls, solve_unconstrained

__version__ = "0.1.0"
