"""Lie-Trotter splitting for semilinear stochastic evolution equations on
(0,1), with a Monte Carlo harness that measures the scheme's stability,
one-step consistency, and strong convergence order."""

__version__ = "0.1.0"

from .spectral import (
    FractionalExponent,
    OperatorSpec,
    SpectralField,
    apply_fractional_power,
    apply_semigroup,
    fractional_norm,
    to_physical,
    to_spectral,
)
from .noise import (
    CovarianceSpec,
    NoisePath,
    RegularityIndex,
    UnsupportedFamilyError,
    coarsen,
    compute_beta,
    derive_seed,
    hs_norm_partial,
    sample_path,
)
from .flows import (
    DiffusionSpec,
    DriftSpec,
    drift_flow,
    flow_increment_moment,
    stochastic_flow,
)
from .scheme import (
    SchemeConfig,
    TimeGrid,
    lie_trotter_step,
    make_initial,
    reference_trajectory,
    run_trajectory,
)
from .experiments import (
    DegenerateFitError,
    ErrorReport,
    RegularityReport,
    StabilityReport,
    consistency,
    converge,
    fit_order,
    flow_increment,
    regularity,
    stability,
)
from .config import ConfigError, ExperimentSetup, parse_config

__all__ = [
    "__version__",
    "OperatorSpec", "SpectralField", "FractionalExponent",
    "to_physical", "to_spectral", "apply_semigroup", "apply_fractional_power",
    "fractional_norm",
    "CovarianceSpec", "NoisePath", "RegularityIndex", "UnsupportedFamilyError",
    "sample_path", "coarsen", "compute_beta", "hs_norm_partial", "derive_seed",
    "DriftSpec", "DiffusionSpec", "drift_flow", "stochastic_flow",
    "flow_increment_moment",
    "TimeGrid", "SchemeConfig", "make_initial", "lie_trotter_step",
    "run_trajectory", "reference_trajectory",
    "ErrorReport", "StabilityReport", "RegularityReport", "DegenerateFitError",
    "fit_order", "converge", "consistency", "stability", "flow_increment",
    "regularity",
    "ConfigError", "ExperimentSetup", "parse_config",
]
