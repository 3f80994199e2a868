"""Monte Carlo simulation and verification tools for conservative fragmentation chains."""

__version__ = "0.1.0"

from .dislocation import (
    DislocationLaw,
    RatioVector,
    ValidationReport,
    binary_density,
    binary_uniform,
    deterministic_binary,
    law_from_config,
    sample_ratios,
    size_biased_pick,
    validate_law,
)
from .fragtree import FragmentationOutcome, FrozenFragment, outcome_stats, simulate_tree
from .taglines import (
    TagHistory,
    all_separated,
    pairing_event,
    partition_at,
    residuals_at,
    simulate_taglines,
)
from .renewal import (
    StationaryLaw,
    WaitingLaw,
    derive_pi,
    rate_experiment,
    renewal_function,
    simulate_residual,
    stationary_eta,
)
from .empirical import (
    TestFunction,
    gamma,
    gamma_infinity,
    gamma_odot_q,
    make_function,
    phi_transform,
)
from .limits import (
    CovarianceMatrix,
    PairFunctionalEstimate,
    combinatorics,
    covariance_K,
    estimate_V_coupled,
    estimate_V_pairtag,
)
from .quadrature import quadrature
from .stattests import ad_normality, ks_test

__all__ = [name for name in dir() if not name.startswith("_")]
