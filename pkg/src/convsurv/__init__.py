"""Survival analysis of multi-turn conversation consistency.

Conversations are observed turn by turn until the first answer that
contradicts an initially correct one. The toolkit derives semantic drift
covariates from turn embeddings, fits Cox, AFT and random survival forest
models, evaluates them and turns a fitted model into a turn-wise alert
monitor.
"""

__version__ = "0.1.0"

from .aft import AFTFit, fit_aft
from .cox import CoxFit, fit_cox, fit_cox_model, schoenfeld_test
from .data import ConversationRecord, EventOutcome, TurnRecord, load_conversations, stratified_split
from .errors import ConvergenceError, ConvSurvError, ConvSurvWarning, InvalidInput, SchemaMismatch
from .evaluation import c_index, cross_validate, evaluate, integrated_brier, stratify_by_risk
from .features import FeatureSchema, conversation_summaries, drift_triple
from .forest import ForestFit, fit_rsf
from .monitor import conditional_failure_probability, drift_baseline_monitor, run_monitor, tune_threshold
from .nonparam import kaplan_meier, log_rank_test, nelson_aalen
from .synthetic import GeneratorSpec, generate, generate_ph_violation

__all__ = [
    "AFTFit", "ConvergenceError", "ConvSurvError", "ConvSurvWarning", "ConversationRecord", "CoxFit",
    "EventOutcome", "FeatureSchema", "ForestFit", "GeneratorSpec", "InvalidInput", "SchemaMismatch",
    "TurnRecord", "c_index", "conditional_failure_probability", "conversation_summaries",
    "cross_validate", "drift_baseline_monitor", "drift_triple", "evaluate", "fit_aft", "fit_cox",
    "fit_cox_model", "fit_rsf", "generate", "generate_ph_violation", "integrated_brier",
    "kaplan_meier", "load_conversations", "log_rank_test", "nelson_aalen", "run_monitor",
    "schoenfeld_test", "stratified_split", "stratify_by_risk", "tune_threshold",
]
