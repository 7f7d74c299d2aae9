"""Estimation of contact-tracing probability and contact structure from
counts of detected cases per index case, for an SIR epidemic on a random tree.
"""
from .degree import (
    FAMILIES,
    DegreeModel,
    Fixed,
    Geometric,
    NegBinomial,
    Poisson,
    PowerLaw,
    RandomMixingLimit,
    parse_degree_spec,
)
from .inference import (
    DetecteeHistogram,
    FitOptions,
    FitResult,
    FitStatus,
    fit_mle,
    gradient_and_hessian,
    log_likelihood,
    profile_ci_mean_k,
    wald_ci,
)
from .kernels import (
    EpidemicParams,
    GrowthSummary,
    SubcriticalTreeError,
    edge_trace_prob,
    growth_summary,
    index_age_density,
    nondimensionalize,
)
from .mixture import DetecteePmf, TracingMode, detectee_pmf
from .selection import GofReport, aic, chi_square_gof, cumulative_compare
from .simulator import (
    IndexCaseRecord,
    SimConfig,
    records_to_histogram,
    simulate_configuration,
    simulate_tree,
)

__version__ = "0.1.0"
