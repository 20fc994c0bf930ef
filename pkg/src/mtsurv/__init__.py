"""Parametric illness-death survival models with multiple timescales.

Fitting, simulation, prediction (occupancy probabilities and length of
stay) and Monte Carlo study tooling for Weibull transition models whose
ill-to-dead hazard may depend on the state-2 entry time and the time since
entry.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import (
    ConfigError,
    ContractError,
    ConvergenceError,
    DataError,
    DomainError,
    MtsurvError,
    SingularInformationError,
)
from .estimation import (
    FitOptions,
    FitResult,
    LongData,
    LongRecord,
    TransitionFit,
    fit_model,
    fit_transition,
    log_likelihood,
    observed_information,
)
from .io import reshape_wide_to_long
from .model import (
    ModelSpec,
    QuadratureConfig,
    TimescaleCase,
    TransitionSpec,
    conditional_survival,
    cumulative_hazard,
    hazard,
    illness_death_model,
)
from .predict import (
    DeltaCI,
    PredictionGrid,
    occupancy_quadrature,
    occupancy_simulation,
    prediction_ci_delta,
)
from .simulate import (
    BernoulliCovariate,
    NormalCovariate,
    SimulatedCohort,
    SimulationConfig,
    draw_case1_time,
    draw_root_time,
    draw_weibull_time,
    simulate_cohort,
)
from .study import (
    PerformanceMeasures,
    Scenario,
    ScenarioResult,
    reference_scenarios,
    performance_measures,
    run_scenario,
)

__version__ = "0.1.0"
