"""Benchmark engine for unlearning in implicit-feedback recommenders.

Stages: train collaborative-filtering models (WMF, BPR, LightGCN), select
unlearning sets by bipartite-graph importance (core/edge/random), execute
exact (full or sharded retraining) and approximate (influence-function)
unlearning, and score completeness, utility, efficiency, and fairness.
"""

from .dataset import (
    DatasetError,
    InteractionSet,
    RawRating,
    SplitBundle,
    derive_rng,
    derive_seed,
    load_ratings,
    preprocess,
    sample_negatives,
    split,
)
from .evaluation import (
    EvalError,
    GroupAssignment,
    MIOModel,
    a_igf,
    hr_at_k,
    make_groups,
    mio_accuracy,
    ndcg_at_k,
    shard_gf,
    train_mio,
)
from .harness import (
    ExperimentConfig,
    HarnessError,
    ResultRow,
    Seeds,
    load_config,
    parse_results,
    run_experiment,
    sweep,
)
from .models import (
    EmbeddingTable,
    Hyperparams,
    TrainedModel,
    TrainingError,
    hessian_vector_product,
    load_checkpoint,
    loss_grad,
    save_checkpoint,
    score_topk,
    train,
)
from .selection import (
    BipartiteGraph,
    SelectionError,
    UnlearnSet,
    build_graph,
    importance,
    select_unlearn_set,
    user_importances,
)
from .unlearn import (
    METHOD_LABELS,
    METHODS,
    ShardEnsemble,
    ShardPlan,
    UnlearnError,
    UnlearnOutcome,
    UnlearnRequest,
    balanced_partition,
    fit_aggregator,
    prepare,
    scif_influence_update,
    unlearn,
)

__version__ = "0.1.0"
