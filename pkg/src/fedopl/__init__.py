"""Federated offline policy learning from logged bandit feedback.

The pipeline: per-client cross-fitted doubly robust score construction
(aipw), an online cost-sensitive classification oracle (csmc) driving
federated policy optimization (federation), heterogeneity and regret
diagnostics (diagnostics), synthetic multi-client environments (datagen),
scripted studies (experiments), and a CSV-emitting CLI (cli).
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .aipw import (
    AipwScoreRow,
    AipwScores,
    FoldAssignment,
    NuisanceConfig,
    cross_fit_scores,
    oracle_value_monte_carlo,
    policy_value_estimate,
)
from .csmc import CsmcBatch, CsmcRegressors, LearningRate, csmc_predict, csmc_update, export_policy
from .datagen import (
    AllocationRule,
    ClientEnvSpec,
    CounterfactualSample,
    allocate,
    sample_counterfactual,
    true_mean_reward,
)
from .diagnostics import (
    RegretEvaluator,
    RegretReport,
    ShiftReport,
    SkewnessReport,
    empirical_regret,
    gaussian_shift_terms,
    shift_report,
    skewed_lambda,
    skewness,
    value_of_information,
)
from .experiments import (
    ExperimentManifest,
    heterogeneous_manifest,
    homogeneous_manifest,
    run_experiment,
    train_reference_policies,
)
from .federation import (
    RoundConfig,
    run_centralized,
    run_fedopl,
    run_local_baseline,
)
from .rng import StreamKey
from .types import (
    ActionSpace,
    ClientDataset,
    ClientSamplingDistribution,
    LinearPolicy,
    LoggedSample,
    hamming_distance,
    policy_decide,
)

__version__ = "0.1.0"
