"""Shrinking a blinded two-arm trial one participant at a time.

Participants are stratified by arm and by their answer to a 3-choice
blinding questionnaire; when the trial must shrink, participants are dropped
from whichever sub-group's removal least perturbs the Bayesian probability
that treatment beats control.
"""

from .errors import (
    AccuracyError,
    AccuracyWarning,
    AdaptationExhausted,
    ConfigError,
    InsufficientDataError,
    IntegrityError,
    InvalidInputError,
    NoEvidenceError,
    NotFoundError,
    SingularStatisticError,
    TrialAdaptError,
)
from .experiment import ExperimentConfig, protocol_config, run_experiment, summarize
from .inference import (
    CollapsedStat,
    IntegrationDomain,
    ModelParams,
    OutcomeTransform,
    PosteriorSummary,
    Predictive,
    RhoResult,
    collapse,
    differential_posterior,
    predictive_unnorm,
    rho_star,
)
from .numerics import McSpec, QuadratureSpec, integrate_1d, integrate_2d_nested, sample_normal, sample_uniform_choice
from .policy import Policy, RemovalEvent, RemovalPlanConfig, remove_sequentially, uniform_random_candidate
from .sensitivity import SensitivityReport, SideSensitivity, rank_candidates, sensitivity_of_predictive, side_sensitivity
from .simulation import GroundTruth, SimConfig, ground_truth_differential, init_trial, simulate, step_beliefs, step_effects
from .trial import (
    Arm,
    BeliefTier,
    MatchedPair,
    ParticipantRecord,
    SubGroupData,
    TrialSnapshot,
    remove_participant,
    stratify,
    threshold_response,
)

__version__ = "0.1.0"
