"""Monte Carlo laboratory for stochastic heat equations with space-time white noise.

Simulates drifted and driftless equations on a lattice, carries the Girsanov
log-density along driftless paths and compares the two laws through a
battery of terminal functionals.
"""
from ._backend import BACKEND
from .coefficients import (AllenCahnParams, CoefficientSet, InitialCondition, allen_cahn_preset,
                           constant_preset, drift_ratio, linear_walsh_preset, validate,
                           zero_drift_preset)
from .errors import (ComputationError, DegenerateWeightsError, DimensionError,
                     InsufficientCoverageError, InvalidConfigurationError, PathBlowUpError,
                     SchemaError, SpdeLabError, UndefinedRatioError, UnsupportedOrderError,
                     WeightOverflowError)
from .girsanov import (WeightTrajectory, accumulate, ess, novikov_estimate, normalized_weights,
                       shifted_noise)
from .grid_noise import Grid, NoiseField, ito_integral, l2_integral, make_grid, sample_noise
from .heat_solver import PathField, SchemeConfig, simulate_path, step, weak_form_residual
from .law_equivalence import (EnsembleResult, Functional, TestReport, compare, run_direct,
                              run_reweighted, tau_coverage)
from .sde_oracle import SdeSpec, analytic_tilt_moments, girsanov_weight_1d, simulate_sde

__version__ = "0.1.0"
