"""Two-stage adaptive sparse and smooth selection of functional predictors
with varying coefficients, plus conformal prediction bands.

Typical use::

    from safeglasso import BasisSpec, make_basis, safe_select
    from safeglasso.simgen import ToyConfig, gen_toy

    ds, truth = gen_toy(ToyConfig(C=5, seed=1))
    basis_s = make_basis(BasisSpec(0.0, 1.0, 15))
    basis_z = make_basis(BasisSpec(-1.0, 1.0, 7))
    result = safe_select(ds, basis_s, basis_z)
    result.stage2_set          # zero-based indices of the selected predictors
"""

from .basis import BasisSpec, BasisSystem, evaluate_basis, evaluate_basis_dd, make_basis
from .conformal import ConformalBand, conformal_pair, roo_conformal, split_conformal
from .cv import block_cv_partition, prediction_error
from .design import (CenteringStats, FunctionalDataset, GroupedDesign, assemble_design, center,
                     penalized_smooth, riemann_weights, uncenter, window_history)
from .errors import (ConfigurationError, DataError, DomainError, NumericalError,
                     SafeGlassoError)
from .metrics import MetricReport, TruthSpec, coverage_stats, mse, selection_metrics
from .selection import (GroupPenalty, PenaltyConfig, SafeAlgorithm, SafeOptions, SelectionResult,
                        adaptive_weights, build_group_penalty, cv_tune, evaluate_surface,
                        initial_fit, post_fit, reparametrize, safe_select)
from .solver import (GroupProblem, group_lasso_exact, group_lasso_gmd, kkt_check, lambda_max,
                     smooth_ridge_fit, solution_path)

__version__ = "0.1.0"
