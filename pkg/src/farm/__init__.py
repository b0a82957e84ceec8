"""Factor-augmented sparse regression: estimation, adequacy tests and simulations."""

from .anova_test import (
    AnovaResult,
    ScreenRule,
    ScreeningResult,
    marginal_screen,
    anova_statistic,
    power_region_check,
    sparse_adequacy_test,
    split_sample,
)
from .errors import (
    DataFormatError,
    DegenerateColumn,
    DegenerateSpectrum,
    ExponentTooLarge,
    FarmError,
    InsufficientData,
    NonConvergence,
    RankDeficient,
    SupportTooLarge,
    WindowTooSmall,
)
from .estimate import FarmEstimate, LambdaPath, cv_select_lambda, fit_farm_cv, fit_farm_lasso
from .fab_test import (
    DebiasedEstimate,
    PrecisionEstimate,
    TestReport,
    debias,
    entrywise_ci,
    estimate_sigma_rcv,
    fab_test,
    group_test,
    multiplier_bootstrap,
    nodewise_precision,
)
from .factor_model import (
    DataSet,
    FactorEstimate,
    SimulationTruth,
    estimate_factors,
    project_out_factors,
    select_num_factors,
)
from .huber import HuberConfig, HuberFit, cv_huber, default_tuning, fit_farm_huber
from .simbench import DgpSpec, Noise, ReplicationTable, error_curve, generate, run_table

__version__ = "0.1.0"
