"""Coupled tensor-factorization recommenders for time-aware implicit feedback."""
from .data import (Dataset, Holdout, Interaction, Split, TimeGrid, Vocab, build_dataset,
                   build_time_grid, kcore_filter, load_split, parse_interactions, save_split,
                   split_dataset)
from .estimators import (CMTFRecommender, CPRecommender, DCFARecommender, DCFRecommender,
                         MFRecommender, PITFRecommender, PopularityRecommender, RandomRecommender,
                         VBPRRecommender, make_recommender)
from .evaluation import MetricsReport, compare_models, evaluate_model, ndcg_at_n, recall_at_n
from .features import FeatureMatrix, load_features, normalize_features, save_features, synth_features
from .models import BaselineParams, DcfaParams, predict_dcf, predict_dcfa, top_n
from .training import TrainConfig, bpr_gradient, bpr_pair_objective, grad_check, train_bpr

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Holdout", "Interaction", "Split", "TimeGrid", "Vocab", "build_dataset",
    "build_time_grid", "kcore_filter", "load_split", "parse_interactions", "save_split",
    "split_dataset", "CMTFRecommender", "CPRecommender", "DCFARecommender", "DCFRecommender",
    "MFRecommender", "PITFRecommender", "PopularityRecommender", "RandomRecommender",
    "VBPRRecommender", "make_recommender", "MetricsReport", "compare_models", "evaluate_model",
    "ndcg_at_n", "recall_at_n", "FeatureMatrix", "load_features", "normalize_features",
    "save_features", "synth_features", "BaselineParams", "DcfaParams", "predict_dcf",
    "predict_dcfa", "top_n", "TrainConfig", "bpr_gradient", "bpr_pair_objective", "grad_check",
    "train_bpr",
]
