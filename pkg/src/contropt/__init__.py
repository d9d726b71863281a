"""Global minimization by nested contraction of surrogate sublevel sets."""

from .bench import BenchmarkReport, grid_search_baseline, random_search_baseline, run_benchmark
from .contraction import (
    ContractionRecord,
    RunConfig,
    RunResult,
    apply_contraction,
    diagnostic_qk,
    error_gate,
    estimate_contraction_factor,
    percentile,
    run,
)
from .error_estimation import ErrorStats, chebyshev_bound, coverage_floor, cv_error_stats
from .errors import (
    ControptError,
    DomainEmptyError,
    DomainError,
    EvaluationError,
    FitError,
    IllConditionedError,
)
from .geometry import (
    BoxDomain,
    ConstrainedDomain,
    SampleSet,
    WalkParams,
    fill_distance_probe,
    generate_candidates,
    max_nn_distance,
    rrw_endpoint,
    select_farthest,
    separation_distance,
)
from .objectives import ObjectiveSpec, get_objective
from .surrogate import (
    Hyperparameters,
    KernelModel,
    fit,
    log_marginal_likelihood,
    mean_gradient,
    minimize_model,
    predict_mean,
    predict_variance,
)

__version__ = "0.1.0"
