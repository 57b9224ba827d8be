"""Predictor-based neural-architecture search for event-sequence classifiers."""

__version__ = "0.1.0"

from .space import (  # noqa: F401
    ArchitectureSpec,
    SearchSpaceConfig,
    canonical_id,
    cardinality,
    enumerate_layer_variants,
    sample_architecture,
    validate_spec,
)
from .avec import FeatureLayout, FeatureVector, decode, encode, feature_layout  # noqa: F401
from .engine import (  # noqa: F401
    SearchConfig,
    SearchState,
    TrainedRecord,
    load_state,
    report_top3_curve,
    resume,
    run_random_search,
    run_search,
)
from .surrogate import PredictorConfig, ScorePrediction, eval_mae, fit, predict  # noqa: F401
