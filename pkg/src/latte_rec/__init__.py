"""Tensor collaborative filtering with a smoothed rating scale.

LaTTe decomposes the binary user x item x rating tensor after smoothing its
rating mode with a rating-similarity matrix, and scores items by folding a
user's history through the learned factors. The package also ships the
baselines it is compared with (Random, MostPopular, normalized PureSVD,
EASE, CoFFee) and a stratified top-n evaluation (HR+/-, MRR+/-, coverage,
MCC).
"""
__version__ = "0.1.0"

from .data import (
    Dataset,
    Interaction,
    RatingScale,
    SplitBundle,
    build_tensor,
    generate_shifted_population,
    ingest,
    leave_last_out,
    split,
    temporal_split,
    transform_scale,
)
from .evaluation import ConfusionCounts, MetricsReport, classify, evaluate, mcc
from .kernels import BACKEND
from .linalg import SparseTensor3, TuckerFactors, fit, hooi, mode_product, truncated_svd
from .models import (
    CONTEXTS,
    ContextAggregation,
    ModelConfig,
    TrainedModel,
    aggregate_context,
    preference_matrix,
    topn,
    train,
)
from .similarity import DependencyLaw, SimilarityMatrix, build_similarity, law_value, sqrt_factors
from .tuning import GridSpec, TuneResult, tune
