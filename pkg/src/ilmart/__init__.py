"""Interpretable LambdaMART: a constrained boosted ranker that is an exact
additive model over single features and a bounded set of feature pairs."""

from .dataset import BinMapper, Dataset, DatasetError, build_bins, load_svmlight
from .interpret import (
    EffectImportance,
    InteractionSurface,
    ShapeFunction,
    additive_score,
    distill_shapes,
    effect_importance,
    export_shapes,
    import_shapes,
)
from .lambdas import LambdaGrad, compute_lambdas, ndcg_swap_deltas
from .metrics import NdcgReport, mean_ndcg, ndcg_at, per_query_ndcg
from .stats import SignificanceResult, fisher_randomization
from .trainer import (
    IlmartModel,
    ModelError,
    TrainConfig,
    load_model,
    save_model,
    select_interactions,
    train_ilmart,
    train_interaction_effects,
    train_main_effects,
)
from .trees import ConstraintRegime, DecisionTree, fit_tree

__version__ = "0.1.0"

__all__ = [
    "BinMapper",
    "ConstraintRegime",
    "Dataset",
    "DatasetError",
    "DecisionTree",
    "EffectImportance",
    "IlmartModel",
    "InteractionSurface",
    "LambdaGrad",
    "ModelError",
    "NdcgReport",
    "ShapeFunction",
    "SignificanceResult",
    "TrainConfig",
    "additive_score",
    "build_bins",
    "compute_lambdas",
    "distill_shapes",
    "effect_importance",
    "export_shapes",
    "fisher_randomization",
    "fit_tree",
    "import_shapes",
    "load_model",
    "load_svmlight",
    "mean_ndcg",
    "ndcg_at",
    "ndcg_swap_deltas",
    "per_query_ndcg",
    "save_model",
    "select_interactions",
    "train_ilmart",
    "train_interaction_effects",
    "train_main_effects",
]
