"""Stochastic training loop, early stopping, splits, and evaluation.

Each optimizer step draws a fresh batch of training-stimulus pairs,
scales the neural distances through a running min-max state, evaluates
the soft Spearman objective with its gradient, and takes an AdamW step
(ascent; weight decay is pinned at zero, so this reduces to Adam).
Training stops once the best batch objective has not improved
for ``patience`` consecutive steps, or at ``max_steps``.  The returned
parameters are the snapshot from the best-objective step, since the
per-batch objective is noisy.

Everything is driven by integer seeds through independent named
streams, so a (seed, config, data) triple fixes the entire trajectory
bitwise.  Splits partition stimuli, never pairs; test pairs are pairs
with both members held out, and training reads only training rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import FeatureTable, RepresentationSet, check_aligned, univariate_slice
from .errors import DegenerateDataError, InvalidInputError, MlemError
from .model import (
    MetricParams,
    MinMaxState,
    ObjectiveResult,
    build_weights,
    init_params,
    minmax_scale,
    normalize_frobenius,
    objective_and_gradient,
    predict_from_rows,
)
from .pairs import all_pairs, assemble_batch, pair_count, pairs_from_indices, sample_pairs
from .softrank import SoftRankConfig, spearman_exact

# Named RNG streams derived from the user seed.
_STREAM_INIT = 11
_STREAM_BATCHES = 12
_STREAM_SPLIT = 21
_STREAM_EVAL = 31
_STREAM_FOLD_SEED = 41

# Objective improvements below this are treated as float jitter.
IMPROVEMENT_TOL = 1e-5

STOP_PATIENCE = "patience"
STOP_MAX_STEPS = "max_steps"


def _stream(seed: int, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), tag, *extra)))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    patience: int = 50
    max_steps: int = 1000
    batch_size: int = 4096
    softrank: SoftRankConfig = field(default_factory=SoftRankConfig)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning rate must be positive")
        if self.patience < 1 or self.max_steps < 1 or self.batch_size < 1:
            raise InvalidInputError("patience, max_steps and batch_size must be >= 1")
        if self.weight_decay != 0.0:
            raise InvalidInputError("weight decay is fixed at 0")


@dataclass(frozen=True)
class TrainTrace:
    """Per-step objectives plus the stopping summary."""

    objectives: tuple[float | None, ...]
    best_objectives: tuple[float | None, ...]
    steps_to_converge: int
    stop_reason: str
    best_step: int
    best_objective: float | None


@dataclass(frozen=True)
class TrainedModel:
    variant: str
    feature_names: tuple[str, ...]
    params: MetricParams
    W: np.ndarray
    trace: TrainTrace
    config: TrainConfig

    @property
    def m(self) -> int:
        return len(self.feature_names)

    def predict(self, feature_rows: np.ndarray) -> np.ndarray:
        return predict_from_rows(self.W, feature_rows, self.variant)


@dataclass(frozen=True)
class AdamState:
    step: int
    m1: np.ndarray
    m2: np.ndarray

    @staticmethod
    def zeros(shape) -> "AdamState":
        return AdamState(step=0, m1=np.zeros(shape), m2=np.zeros(shape))


def adamw_step(
    values: np.ndarray, grads: np.ndarray, state: AdamState, config: TrainConfig
) -> tuple[np.ndarray, AdamState]:
    """One decoupled-weight-decay Adam descent step on ``values``.

    ``grads`` is the gradient of the quantity being minimized; callers
    maximizing an objective pass its negation.
    """
    if values.shape != grads.shape:
        raise InvalidInputError("parameter and gradient shapes differ")
    if not np.isfinite(grads).all():
        bad = int(np.size(grads) - np.isfinite(grads).sum())
        raise MlemError(f"non-finite gradient ({bad} entries) at step {state.step + 1}")
    t = state.step + 1
    m1 = config.adam_beta1 * state.m1 + (1.0 - config.adam_beta1) * grads
    m2 = config.adam_beta2 * state.m2 + (1.0 - config.adam_beta2) * grads * grads
    m1_hat = m1 / (1.0 - config.adam_beta1**t)
    m2_hat = m2 / (1.0 - config.adam_beta2**t)
    updated = values - config.learning_rate * (
        config.weight_decay * values + m1_hat / (np.sqrt(m2_hat) + config.adam_eps)
    )
    return updated, AdamState(step=t, m1=m1, m2=m2)


def _check_not_degenerate(
    reps: RepresentationSet, indices: np.ndarray, rng: np.random.Generator
) -> None:
    n = len(indices)
    if n <= 2048:
        sub = reps.matrix[indices]
        gram = sub @ sub.T
        sq = np.diag(gram)
        d2 = sq[:, None] + sq[None, :] - 2.0 * gram
        iu = np.triu_indices(n, k=1)
        dists = np.sqrt(np.maximum(d2[iu], 0.0))
    else:
        probe = sample_pairs(n, 4096, rng)
        dists = reps.pair_distances(indices[probe[:, 0]], indices[probe[:, 1]])
    if dists.size and float(dists.max() - dists.min()) <= 0.0:
        raise DegenerateDataError("all neural distances equal, nothing to fit")


def fit(
    table: FeatureTable,
    reps: RepresentationSet,
    variant: str,
    config: TrainConfig,
    train_indices: np.ndarray | None = None,
) -> TrainedModel:
    """Train one model on the given stimuli (all stimuli by default)."""
    check_aligned(table, reps)
    if train_indices is None:
        train_indices = np.arange(table.n, dtype=np.int64)
    else:
        train_indices = np.asarray(train_indices, dtype=np.int64)
    n_train = len(train_indices)
    if pair_count(n_train) < 2:
        raise InvalidInputError("need at least 3 training stimuli to form pairs")

    rng_batches = _stream(config.seed, _STREAM_BATCHES)
    _check_not_degenerate(reps, train_indices, rng_batches)
    params = init_params(table.m, variant, _stream(config.seed, _STREAM_INIT))
    adam = AdamState.zeros(params.A.shape)
    scaler = MinMaxState()
    batch_size = min(config.batch_size, pair_count(n_train))

    objectives: list[float | None] = []
    best_curve: list[float | None] = []
    best_value: float | None = None
    best_params = params
    best_step = 0
    bad_steps = 0
    stop_reason = STOP_MAX_STEPS

    for step in range(1, config.max_steps + 1):
        local = sample_pairs(n_train, batch_size, rng_batches)
        # train_indices is unsorted, so restore i < j after mapping
        global_pairs = np.sort(train_indices[local], axis=1)
        batch = assemble_batch(table, reps, global_pairs)
        result: ObjectiveResult = objective_and_gradient(
            params, batch, config.softrank, scaler
        )
        scaler = result.scaler
        if result.degenerate:
            objectives.append(None)
            bad_steps += 1
        else:
            objectives.append(result.value)
            if best_value is None or result.value > best_value + IMPROVEMENT_TOL:
                best_value = result.value
                best_params = params
                best_step = step
                bad_steps = 0
            else:
                bad_steps += 1
        best_curve.append(best_value)
        if bad_steps >= config.patience:
            stop_reason = STOP_PATIENCE
            break
        if not result.degenerate:
            A, adam = adamw_step(params.A, -result.grad, adam, config)
            params = MetricParams(A=A, variant=variant)

    trace = TrainTrace(
        objectives=tuple(objectives),
        best_objectives=tuple(best_curve),
        steps_to_converge=len(objectives),
        stop_reason=stop_reason,
        best_step=best_step,
        best_objective=best_value,
    )
    W = normalize_frobenius(build_weights(best_params))
    return TrainedModel(
        variant=variant,
        feature_names=tuple(table.feature_names),
        params=best_params,
        W=W,
        trace=trace,
        config=config,
    )


def evaluate(
    model: TrainedModel,
    table: FeatureTable,
    reps: RepresentationSet,
    stimulus_indices: np.ndarray,
    cap: int = 200_000,
    seed: int = 0,
) -> float:
    """Exact Spearman between predicted and empirical distances.

    Uses every pair of the given stimuli, or a seeded uniform subsample
    when the pair count exceeds ``cap``.
    """
    indices = np.asarray(stimulus_indices, dtype=np.int64)
    if len(indices) < 2:
        raise InvalidInputError("need at least 2 stimuli to evaluate")
    total = pair_count(len(indices))
    if total < 2:
        raise DegenerateDataError("a single held-out pair cannot be rank scored")
    if total <= cap:
        local = all_pairs(len(indices))
    else:
        rng = _stream(seed, _STREAM_EVAL)
        local = pairs_from_indices(
            rng.choice(total, size=cap, replace=False), len(indices)
        )
    batch = assemble_batch(table, reps, np.sort(indices[local], axis=1))
    predicted = model.predict(batch.feature_distances)
    return spearman_exact(predicted, batch.neural_distances)


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "holdout"
    train_fraction: float = 0.8
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("holdout", "kfold"):
            raise InvalidInputError("split mode must be 'holdout' or 'kfold'")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidInputError("train fraction must be in (0, 1)")
        if self.folds < 2:
            raise InvalidInputError("need at least 2 folds")


def holdout_split(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle stimuli and split; both sides keep at least 2 stimuli."""
    if n < 4:
        raise InvalidInputError("need at least 4 stimuli for a holdout split")
    perm = _stream(seed, _STREAM_SPLIT).permutation(n)
    n_train = int(round(train_fraction * n))
    n_train = min(max(n_train, 2), n - 2)
    return perm[:n_train], perm[n_train:]


def kfold_splits(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Partition stimuli into k folds; fold f tests on fold f, trains on the rest."""
    if n < k:
        raise InvalidInputError(f"cannot make {k} folds from {n} stimuli")
    perm = _stream(seed, _STREAM_SPLIT).permutation(n)
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    splits = []
    start = 0
    for size in sizes:
        test = perm[start : start + size]
        if len(test) < 2:
            raise InvalidInputError("fold too small to form test pairs")
        train = np.concatenate([perm[:start], perm[start + size :]])
        splits.append((train, test))
        start += size
    return splits


def _fold_seed(base: int, fold: int) -> int:
    return int(np.random.SeedSequence((int(base), _STREAM_FOLD_SEED, fold)).generate_state(1)[0])


@dataclass(frozen=True)
class FoldResult:
    fold: int
    model: TrainedModel
    test_spearman: float
    train_indices: np.ndarray
    test_indices: np.ndarray


def run_split(
    table: FeatureTable,
    reps: RepresentationSet,
    variant: str,
    config: TrainConfig,
    split: SplitSpec,
    eval_cap: int = 200_000,
) -> list[FoldResult]:
    """Train and evaluate per the split: one fold for holdout, k for kfold."""
    if split.mode == "holdout":
        train_idx, test_idx = holdout_split(table.n, split.train_fraction, split.seed)
        pieces = [(train_idx, test_idx)]
    else:
        pieces = kfold_splits(table.n, split.folds, split.seed)
    results = []
    for fold, (train_idx, test_idx) in enumerate(pieces):
        fold_config = config if len(pieces) == 1 else replace(
            config, seed=_fold_seed(config.seed, fold)
        )
        model = fit(table, reps, variant, fold_config, train_idx)
        score = evaluate(model, table, reps, test_idx, cap=eval_cap, seed=fold_config.seed)
        results.append(
            FoldResult(
                fold=fold,
                model=model,
                test_spearman=score,
                train_indices=train_idx,
                test_indices=test_idx,
            )
        )
    return results


def cross_validate(
    table: FeatureTable,
    reps: RepresentationSet,
    variant: str,
    config: TrainConfig,
    k: int = 5,
    split_seed: int | None = None,
    eval_cap: int = 200_000,
) -> list[FoldResult]:
    """k-fold cross-validation; reports one trained model and score per fold."""
    split = SplitSpec(
        mode="kfold",
        folds=k,
        seed=config.seed if split_seed is None else split_seed,
    )
    return run_split(table, reps, variant, config, split, eval_cap=eval_cap)


def univariate_models(
    table: FeatureTable,
    reps: RepresentationSet,
    units: list[int],
    config: TrainConfig,
    split: SplitSpec,
    eval_cap: int = 200_000,
) -> dict[int, FoldResult]:
    """One holdout-trained model per representation unit, sharing the split."""
    if split.mode != "holdout":
        raise InvalidInputError("per-unit training uses a holdout split")
    out: dict[int, FoldResult] = {}
    for unit in units:
        sliced = univariate_slice(reps, unit)
        out[unit] = run_split(table, sliced, "mlem", config, split, eval_cap=eval_cap)[0]
    return out


__all__ = [
    "AdamState",
    "FoldResult",
    "IMPROVEMENT_TOL",
    "MinMaxState",
    "SplitSpec",
    "TrainConfig",
    "TrainTrace",
    "TrainedModel",
    "adamw_step",
    "cross_validate",
    "evaluate",
    "fit",
    "holdout_split",
    "kfold_splits",
    "minmax_scale",
    "run_split",
    "univariate_models",
]
