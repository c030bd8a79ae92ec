"""Mean-field interacting particle systems on a finite state space.

Particle simulation, the McKean-Vlasov flow, equilibrium fixed points, the
WLAN back-off collision fixed point, and Monte-Carlo checks of the large-N
limit, behind one ``meanfield`` command-line tool.
"""

__version__ = "0.1.0"

from .equilibria import (
    FixedPointReport,
    classify_stability,
    equilibrium_response,
    find_fixed_points,
    fixed_point_residual,
    tangent_jacobian,
)
from .errors import (
    HorizonError,
    InconsistencyError,
    IntegrationError,
    MeanFieldError,
    ModelEvaluationError,
    NumericalError,
    ReducibilityError,
    ThinningBoundError,
    ValidationError,
)
from .flow import CycleDescriptor, Flow, LimitSetResult, detect_limit_cycle, dynamic_response, integrate
from .limits import ConvergenceTable, decoupling_test, level4_marginal_test, lln_test, pair_chain_law
from .model import (
    AffineExpRates,
    MeanFieldModel,
    build_rate_matrix,
    constant_rate_model,
    custom_model,
    drift,
    edge_rates,
    simplex_point,
    sis_model,
    tv_distance,
    wlan_model,
)
from .particles import (
    EmpiricalTrajectory,
    ParticleConfiguration,
    TaggedPath,
    simulate,
    simulate_inhomogeneous_tagged,
    simulate_tagged,
)
from .wlan import BackoffParameters, Level1Report, beta, cross_level_check, solve_gamma_star

__all__ = [
    "AffineExpRates",
    "BackoffParameters",
    "beta",
    "build_rate_matrix",
    "classify_stability",
    "constant_rate_model",
    "ConvergenceTable",
    "cross_level_check",
    "custom_model",
    "CycleDescriptor",
    "decoupling_test",
    "detect_limit_cycle",
    "drift",
    "dynamic_response",
    "edge_rates",
    "EmpiricalTrajectory",
    "equilibrium_response",
    "find_fixed_points",
    "fixed_point_residual",
    "FixedPointReport",
    "Flow",
    "HorizonError",
    "InconsistencyError",
    "integrate",
    "IntegrationError",
    "Level1Report",
    "level4_marginal_test",
    "LimitSetResult",
    "lln_test",
    "MeanFieldError",
    "MeanFieldModel",
    "ModelEvaluationError",
    "NumericalError",
    "pair_chain_law",
    "ParticleConfiguration",
    "ReducibilityError",
    "simplex_point",
    "simulate",
    "simulate_inhomogeneous_tagged",
    "simulate_tagged",
    "sis_model",
    "solve_gamma_star",
    "TaggedPath",
    "tangent_jacobian",
    "ThinningBoundError",
    "tv_distance",
    "ValidationError",
    "wlan_model",
]
