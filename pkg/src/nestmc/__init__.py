"""Nested Monte Carlo estimation toolkit.

Depth-D nested estimators, single-expectation reformulations for linear,
discrete, product, and polynomial structure, finite-sample MSE bounds with
optimal sample allocations, and a replicated convergence-sweep harness.
"""

__version__ = "0.1.0"

from .bounds import (
    BoundInputs,
    Smoothness,
    alpha_allocation,
    bound_lipschitz,
    bound_single_exact,
    bound_smooth,
    optimal_allocation,
)
from .errors import (
    BudgetOverflowError,
    HarnessError,
    InfeasibleBudgetError,
    InsufficientDataError,
    IntegrationError,
    LinearityError,
    MissingInputError,
    NestmcError,
    NonFiniteValueError,
    ParameterDomainError,
    ShapeError,
    UnsupportedProblemError,
)
from .harness import (
    AlphaSweepReport,
    MseStats,
    Strategy,
    SweepConfig,
    SweepReport,
    SweepRow,
    alpha_sweep,
    build_plan,
    convergence_sweep,
    empirical_mse,
    enumeration_oracle,
    fit_slope,
    ladder,
    run_replicates,
)
from .models import (
    ANALYTIC_TRUTH,
    TRIPLE_MODIFIED_TRUTH,
    TRIPLE_TRUTH,
    BedNaiveEstimator,
    BedReformEstimator,
    CancerParams,
    ConstantLikelihood,
    DDParams,
    DesignPoint,
    IwaeEstimator,
    ModelEntry,
    NmcEstimator,
    analytic_model,
    bed_naive_eig,
    bed_reformulated_eig,
    cancer_model,
    dd_response_prob,
    iwae_objective,
    registry,
    simulate_tumor,
    simulate_tumor_batch,
    triple_model,
)
from .problem import (
    AllocationPlan,
    DistLevel,
    EstimateRecord,
    FnLevel,
    NestedProblem,
    effective_budget,
    mc_estimate,
    nmc_estimate,
    outer_sample_values,
)
from .reformulate import (
    FiniteOutcomeProblem,
    PolynomialProblem,
    ProductProblem,
    finite_outcome_estimate,
    linear_estimate,
    polynomial_estimate,
    product_expectation_estimate,
    xlogx,
)
from .rng import (
    DistributionSpec,
    RandomStream,
    bernoulli,
    beta,
    categorical,
    format_distribution,
    gamma,
    log_density,
    make_stream,
    normal,
    normal_cdf,
    parse_distribution,
    rayleigh,
    sample,
    sample_batch,
    uniform,
)
