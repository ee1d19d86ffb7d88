"""Trajectory-guided pair selection for two-tower contrastive training."""

from .errors import (
    DegenerateEmbeddingError,
    DegenerateRegressionError,
    DivergenceError,
    FormatError,
    InsufficientDataError,
    PairselError,
)
from .matio import read_square, write_square
from .selection import (
    Batch,
    EpochPlan,
    Schedule,
    batch_score,
    build_batches,
    incremental_score,
    plan_epochs,
    read_plans,
    schedule_alpha,
    select_by_score,
    write_plans,
)
from .snapshots import (
    AGGREGATION_MODES,
    FeatureSequence,
    SimilarityMatrix,
    Snapshot,
    SnapshotSeries,
    aggregate_similarity,
    cosine_similarity,
    load_checkpoint_matrices,
    read_series,
    similarity_matrix,
    write_series,
)
from .synth import ToyDataset, generate_synthetic, parse_group_spec, read_dataset, write_dataset
from .trajectory import (
    Category,
    CategoryLabel,
    CategoryReport,
    DeltaMatrix,
    DeltaResult,
    TrajectoryFit,
    approx_similarity,
    category_report,
    classify_fits,
    classify_pair,
    delta_matrix,
    fit_trajectory,
)
from .training import (
    DualEncoder,
    TrainConfig,
    TrainResult,
    contrastive_loss,
    init_encoder,
    loss_and_grads,
    read_encoder,
    train_reference,
    train_selective,
    write_encoder,
)

__version__ = "0.1.0"

__all__ = [
    "AGGREGATION_MODES",
    "Batch",
    "Category",
    "CategoryLabel",
    "CategoryReport",
    "DegenerateEmbeddingError",
    "DegenerateRegressionError",
    "DeltaMatrix",
    "DeltaResult",
    "DivergenceError",
    "DualEncoder",
    "EpochPlan",
    "FeatureSequence",
    "FormatError",
    "InsufficientDataError",
    "PairselError",
    "Schedule",
    "SimilarityMatrix",
    "Snapshot",
    "SnapshotSeries",
    "ToyDataset",
    "TrainConfig",
    "TrainResult",
    "TrajectoryFit",
    "aggregate_similarity",
    "approx_similarity",
    "batch_score",
    "build_batches",
    "category_report",
    "classify_fits",
    "classify_pair",
    "contrastive_loss",
    "cosine_similarity",
    "delta_matrix",
    "fit_trajectory",
    "generate_synthetic",
    "incremental_score",
    "init_encoder",
    "load_checkpoint_matrices",
    "loss_and_grads",
    "parse_group_spec",
    "plan_epochs",
    "read_dataset",
    "read_plans",
    "read_series",
    "read_square",
    "schedule_alpha",
    "select_by_score",
    "similarity_matrix",
    "train_reference",
    "train_selective",
    "write_dataset",
    "write_encoder",
    "write_plans",
    "write_series",
    "write_square",
]
