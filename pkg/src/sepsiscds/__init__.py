"""Discrete-state treatment policy learning and decision support for
sepsis-style sequential decision problems."""

__version__ = "0.1.0"

from .cohort import (FeatureSchema, FeatureSpec, PatientTrajectory,
                     TimestepRecord, flag_abnormal, ingest_events,
                     validate_cohort)
from .actions import ActionSpace, discretize_action, fit_action_space, recommended_delta
from .statespace import StateModel, assign_state, fit_states
from .mdp import MdpModel, estimate_mdp, policy_iteration
from .ope import WisEstimate, wis_bootstrap, wis_value
from .simgen import GroundTruthMdp, exact_policy_value, make_oracle_mdp, sample_cohort
from .explain import StateExplainer, shapley_attribution
from .recommend import CohortFilter, build_payload, filter_cohort, find_discordant_cases
from .studykit import (DecisionRecord, concordance, concordance_rates,
                       holm_bonferroni, logit_concordance, ols_cluster)
from .bundle import ModelBundle, load_bundle, save_bundle

__all__ = [
    "ActionSpace", "CohortFilter", "DecisionRecord", "FeatureSchema",
    "FeatureSpec", "GroundTruthMdp", "MdpModel", "ModelBundle",
    "PatientTrajectory", "StateExplainer", "StateModel", "TimestepRecord",
    "WisEstimate", "assign_state", "build_payload", "concordance",
    "concordance_rates", "discretize_action", "estimate_mdp",
    "exact_policy_value", "filter_cohort", "find_discordant_cases",
    "fit_action_space", "fit_states", "flag_abnormal", "holm_bonferroni",
    "ingest_events", "load_bundle", "logit_concordance", "make_oracle_mdp",
    "ols_cluster", "policy_iteration", "recommended_delta", "sample_cohort",
    "save_bundle", "shapley_attribution", "validate_cohort", "wis_bootstrap",
    "wis_value",
]
