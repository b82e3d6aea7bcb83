"""Detect recommendation engines that push ineffective items, from binary feedback."""

from .detector import (
    AverageRatingTest,
    BiadResult,
    BiasDetector,
    DetectorParams,
    DetectorState,
    Verdict,
    basic_average_test,
    ingest_round,
    run_biad,
    top_k_sum,
)
from .engine import AdStrategy, EngineKind, FeedbackLog, RecommendationEngine
from .exceptions import (
    BiadError,
    ConfigurationError,
    DomainError,
    ExhaustionError,
    IncompleteLogError,
    ParseError,
    ProtocolError,
)
from .learners import MatrixFactorization, ObservedRatings, UserKNNPearson, make_learner
from .ratings import (
    REFERENCE_ETA,
    RatingMatrix,
    SyntheticSpec,
    count_at_least,
    generate_synthetic,
    load_matrix,
    save_matrix,
)
from .thresholds import (
    ThresholdChain,
    ThresholdVariant,
    approx_p,
    build_threshold,
    chernoff_tail_bound,
    exact_p_noiseless,
    lambert_w0,
)

__version__ = "0.1.0"

__all__ = [
    "AdStrategy",
    "AverageRatingTest",
    "BiadError",
    "BiadResult",
    "BiasDetector",
    "ConfigurationError",
    "DetectorParams",
    "DetectorState",
    "DomainError",
    "EngineKind",
    "ExhaustionError",
    "FeedbackLog",
    "IncompleteLogError",
    "MatrixFactorization",
    "ObservedRatings",
    "ParseError",
    "ProtocolError",
    "REFERENCE_ETA",
    "RatingMatrix",
    "RecommendationEngine",
    "SyntheticSpec",
    "ThresholdChain",
    "ThresholdVariant",
    "UserKNNPearson",
    "Verdict",
    "approx_p",
    "basic_average_test",
    "build_threshold",
    "chernoff_tail_bound",
    "count_at_least",
    "exact_p_noiseless",
    "generate_synthetic",
    "ingest_round",
    "lambert_w0",
    "load_matrix",
    "make_learner",
    "run_biad",
    "save_matrix",
    "top_k_sum",
]
