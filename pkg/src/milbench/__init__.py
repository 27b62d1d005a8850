"""Deterministic multiple-instance learning benchmark.

Bags of precomputed instance features are classified by instance-based
pooling heads (mean, max, mixed, auto, learned-norm, attention) and
embedding-based heads (gated-attention and dual-stream aggregation),
trained with a from-scratch reverse-mode gradient engine and compared
with rank-based AUC and Welch's t-test.  Every run is reproducible from
a single root seed, down to the bytes of the benchmark reports.
"""

from .autodiff import GradCheckResult, Tape, backward, check_gradients, param_gradients
from .bags import (
    Bag,
    BagFormatError,
    DataError,
    Dataset,
    ManifestError,
    ManifestRow,
    load_bag,
    load_dataset,
    read_manifest,
    save_bag,
    write_manifest,
)
from .heads import (
    EMBEDDING_KINDS,
    INSTANCE_KINDS,
    KINDS,
    BagOutput,
    ModelParams,
    ModelSpec,
    bag_output,
    canonical_kind,
    init_params,
    instance_scores,
    param_count,
    pool,
    positive_score,
    predict_multiclass,
)
from .heatmap import export_heatmap, heatmap_values, score_grid, write_grid_csv, write_grid_pgm
from .losses import loss_builder, make_loss_tape
from .metrics import (
    RunPoint,
    Summary,
    WelchResult,
    binary_auc,
    macro_auc,
    regularized_incomplete_beta,
    render_boxplot_csv,
    render_csv,
    render_markdown,
    summarize,
    welch_t_test,
)
from .synth import SynthConfig, SyntheticData, generate_dataset, grid_coords, write_dataset
from .trainer import (
    Adam,
    EpochStats,
    GridResult,
    RunResult,
    TrainConfig,
    TrainingDiverged,
    cosine_lr,
    evaluate,
    grid_search,
    load_params,
    load_run,
    save_params,
    save_run,
    spec_for_dataset,
    train_one,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Bag",
    "BagFormatError",
    "BagOutput",
    "DataError",
    "Dataset",
    "EMBEDDING_KINDS",
    "EpochStats",
    "GradCheckResult",
    "GridResult",
    "INSTANCE_KINDS",
    "KINDS",
    "ManifestError",
    "ManifestRow",
    "ModelParams",
    "ModelSpec",
    "RunPoint",
    "RunResult",
    "Summary",
    "SynthConfig",
    "SyntheticData",
    "Tape",
    "TrainConfig",
    "TrainingDiverged",
    "WelchResult",
    "backward",
    "bag_output",
    "binary_auc",
    "canonical_kind",
    "check_gradients",
    "cosine_lr",
    "evaluate",
    "export_heatmap",
    "generate_dataset",
    "grid_coords",
    "grid_search",
    "heatmap_values",
    "init_params",
    "instance_scores",
    "load_bag",
    "load_dataset",
    "load_params",
    "load_run",
    "loss_builder",
    "macro_auc",
    "make_loss_tape",
    "param_count",
    "param_gradients",
    "pool",
    "positive_score",
    "predict_multiclass",
    "read_manifest",
    "regularized_incomplete_beta",
    "render_boxplot_csv",
    "render_csv",
    "render_markdown",
    "save_bag",
    "save_params",
    "save_run",
    "score_grid",
    "spec_for_dataset",
    "summarize",
    "train_one",
    "welch_t_test",
    "write_dataset",
    "write_grid_csv",
    "write_grid_pgm",
    "write_manifest",
]
