"""Efficient interim monitoring for two-arm trials with binary endpoints.

The interim treatment effect estimator leans on baseline covariates and a
short-term endpoint to recover information from patients whose primary
endpoint is still pending.  On top of it sit conditional power futility
monitoring, a combination-test sample size reassessment, and a Monte Carlo
simulator for operating characteristics.
"""

__version__ = "0.1.0"

from .adaptive import (
    CombinationPlan,
    SsrResult,
    combination_test,
    observed_theta,
    reassess_sample_size,
    second_stage_statistic,
)
from .estimator import (
    EffectEstimate,
    InterimSnapshot,
    PatientRecord,
    WorkingModels,
    estimate_arm_mean,
    estimate_effect,
    partition_cohorts,
    reduce_for_method,
)
from .glm import DesignSpec, FittedGlm, fit_canonical_glm, normal_cdf, normal_quantile, predict_mean
from .monitoring import (
    FutilityBoundary,
    MonitoringState,
    assess_futility,
    blinded_information_fraction,
    conditional_power,
    final_variance_unblinded,
    futility_decision,
    information_fraction,
    interim_z,
)
from .simulate import (
    OperatingCharacteristics,
    ScenarioConfig,
    compute_r_squared,
    generate_trial,
    run_monte_carlo,
    run_replication,
    snapshot_at,
)

__all__ = [
    "CombinationPlan",
    "DesignSpec",
    "EffectEstimate",
    "FittedGlm",
    "FutilityBoundary",
    "InterimSnapshot",
    "MonitoringState",
    "OperatingCharacteristics",
    "PatientRecord",
    "ScenarioConfig",
    "SsrResult",
    "WorkingModels",
    "assess_futility",
    "blinded_information_fraction",
    "combination_test",
    "compute_r_squared",
    "conditional_power",
    "estimate_arm_mean",
    "estimate_effect",
    "final_variance_unblinded",
    "fit_canonical_glm",
    "futility_decision",
    "generate_trial",
    "information_fraction",
    "interim_z",
    "normal_cdf",
    "normal_quantile",
    "observed_theta",
    "partition_cohorts",
    "predict_mean",
    "reassess_sample_size",
    "reduce_for_method",
    "run_monte_carlo",
    "run_replication",
    "second_stage_statistic",
    "snapshot_at",
]
