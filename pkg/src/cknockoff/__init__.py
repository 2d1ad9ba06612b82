"""Calibrated knockoffs (cKnockoff) for FDR-controlled variable selection in the
fixed-design Gaussian linear model."""

from .calibration import (
    CalibrationConfig,
    Engine,
    HypothesisResult,
    OnlineTestState,
    RejectionReport,
    cknockoff_reject,
    fallback_statistic,
    filter_set,
    integrand,
    knockoff_report,
    omega_minus_estimate,
    omega_plus_bounds,
    promising_scores,
    test_Ej_leq_zero,
)
from .confseq import EmpiricalBernsteinCS
from .knockoffs import KnockoffEnsemble, build_knockoffs, load_ensemble, save_ensemble
from .lasso import LassoConvergenceError, coarse_path, lasso_fit
from .linear_model import (
    DegenerateDesignError,
    ProblemInstance,
    bh_reject,
    decompose,
    null_sigma_hat,
    ols_fit,
)
from .sampling import ConditionalSampler, SamplingRegion, eta_cdf, sample_conditional
from .scenarios import Scenario, calibrate_signal, generate, hiv_preprocess, mcc_design, run_trials
from .seqstep import budgets, knockoff_reject, supermartingale_trace
from .star import cknockoff_star_reject, rstar_set, run_methods
from .statistics import feature_statistics

# keep pytest from collecting the re-exported sequential test as a test function
test_Ej_leq_zero.__test__ = False

__version__ = "0.1.0"
