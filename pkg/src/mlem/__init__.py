"""Metric learning encoding models.

Learns a metric over theoretical stimulus features whose pairwise
distances match the geometry of high-dimensional representations, with
permutation importance for features and their interactions, and a
synthetic-data harness with planted ground-truth metrics.
"""

__version__ = "0.1.0"

from .data import (
    Feature,
    FeatureTable,
    RepresentationSet,
    feature_distance,
    load_feature_table,
    load_representations,
    neural_distance,
    univariate_slice,
)
from .errors import DegenerateDataError, InvalidInputError, MlemError
from .importance import (
    ImportanceReport,
    expand_interactions,
    frobenius_distance,
    h_w,
    permutation_importance,
    weighted_tau,
)
from .model import (
    MetricParams,
    MinMaxState,
    build_weights,
    init_params,
    minmax_scale,
    normalize_frobenius,
    objective_and_gradient,
    predict_distances,
)
from .pairs import (
    BatchSizeParams,
    PairBatch,
    assemble_batch,
    sample_pairs,
    select_batch_size,
)
from .softrank import (
    SoftRankConfig,
    isotonic_regression,
    soft_rank,
    soft_rank_pullback,
    spearman_exact,
    spearman_soft,
)
from .synth import (
    SynthConfig,
    add_noise,
    classical_mds,
    generate_dataset,
    ground_truth_distances,
    make_spd,
    sample_binary_features,
)
from .training import (
    SplitSpec,
    TrainConfig,
    TrainedModel,
    adamw_step,
    cross_validate,
    evaluate,
    fit,
    holdout_split,
    kfold_splits,
    run_split,
)
