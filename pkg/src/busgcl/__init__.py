"""Three-branch graph contrastive recommender with exact from-scratch gradients."""

import os as _os

# BUSGCL_THREADS caps BLAS parallelism; must be set before numpy loads.
_threads = _os.environ.get("BUSGCL_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .data import (
    InteractionDataset,
    NormalizedBipartiteGraph,
    SplitDataset,
    TripletBatch,
    build_normalized_adjacency,
    load_interactions,
    sample_bpr_batch,
    split_dataset,
)
from .model import (
    BranchStack,
    ModelParams,
    forward_gcn,
    forward_hypergraph,
    forward_perturbed,
    init_params,
    predict_scores,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    bpr_loss,
    dispersing_loss,
    infonce_bilateral,
    kl_uniform_loss,
    l2_regularization,
    total_loss,
)
from .augment import AugmentedGraph, augment_graph, forward_augmented
from .config import Hyperparams, RunConfig
from .metrics import MetricsReport, evaluate, pca_project
from .training import (
    GradientSet,
    OptimizerState,
    adam_step,
    compute_gradients,
    decay_learning_rate,
    grad_check,
    train,
)
