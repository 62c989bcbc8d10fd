"""Non-myopic multifidelity Bayesian optimization.

An autoregressive multifidelity Gaussian process surrogate, the
multifidelity expected improvement acquisition and its Monte Carlo
two-step lookahead extension, a budget-tracked optimization loop, and a
seeded benchmark harness producing convergence-curve reports.
"""

__version__ = "0.1.0"

from .acquisition import (
    AcquisitionValue,
    CandidateSet,
    McConfig,
    MissingIncumbentError,
    alpha1,
    alpha2,
    alpha3,
    expected_improvement,
    fantasize,
    mfei,
    mfei_batch,
    two_step_acquisition,
)
from .benchmarks import (
    BenchmarkProblem,
    get_problem,
    load_problem_file,
    normalized_error,
    register_problem,
    registry,
)
from .doe import DesignSpec, latin_hypercube, uniform_pool
from .gp import (
    FactorizationError,
    FitConfig,
    GpModel,
    KernelParams,
    NoiseParams,
    PosteriorMoments,
    factorize,
    fit_mle,
    gp_posterior,
    kernel_se,
    log_marginal_likelihood,
    se_gram,
)
from .harness import ExperimentConfig, emit_outputs, run_experiment
from .mfgp import (
    MfGpModel,
    Sample,
    TrainingSet,
    fit_mf,
    mf_cov,
    mf_posterior,
    posterior_fidelity_correlation,
)
from .optimizer import (
    MFEI_BASELINE,
    TWO_STEP,
    BudgetTracker,
    OptimizerConfig,
    TrialRecord,
    maximize_acquisition,
    run,
)
