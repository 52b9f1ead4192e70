"""cfkit: incremental counterfactual explanations under user-editable constraints.

Core flow: train (or load) a classifier, open a session on an instance that
gets the unfavorable prediction, and iterate: the engine proposes a close
counterfactual, the user tightens per-feature feasibility constraints, and
the search warm-starts from the previous population instead of restarting.
"""

from .constraints import (ConstraintSet, ConstraintUpdate, Direction,
                          Immutable, Range, apply_update, apply_updates,
                          is_feasible, repair)
from .data import (Dataset, FeatureSchema, FeatureSpec, FeatureWeights,
                   Instance, compute_weights, load_dataset, load_schema,
                   make_blobs, normalize, save_dataset, train_test_split)
from .engine import (Candidate, GAParams, Population, SearchResult, evolve,
                     fitness, init_knn, init_synthetic)
from .metrics import (AggregateStats, RunMetrics, aggregate, proximity,
                      sparsity, welch_t_test)
from .models import (ForestParams, RandomForestModel, ThresholdModel,
                     load_model, negatives, save_model, train_random_forest)
from .neighbors import KdIndex, build_kd_index
from .session import (Session, run_sequence, start_session)

__version__ = "0.1.0"

__all__ = [
    "AggregateStats", "Candidate", "ConstraintSet", "ConstraintUpdate",
    "Dataset", "Direction", "FeatureSchema", "FeatureSpec", "FeatureWeights",
    "ForestParams", "GAParams", "Immutable", "Instance", "KdIndex",
    "Population", "RandomForestModel", "Range", "RunMetrics", "SearchResult",
    "Session", "ThresholdModel", "aggregate", "apply_update", "apply_updates",
    "build_kd_index", "compute_weights", "evolve", "fitness", "init_knn",
    "init_synthetic", "is_feasible", "load_dataset", "load_model",
    "load_schema", "make_blobs", "negatives", "normalize", "proximity",
    "repair", "run_sequence", "save_dataset", "save_model", "sparsity",
    "start_session", "train_random_forest", "train_test_split",
    "welch_t_test",
]
