"""Sampling stimulus pairs and assembling distance batches on the fly.

Training never materializes full pairwise matrices.  Each step draws a
set of distinct unordered pairs, then computes the feature-distance rows
and neural distances for just those pairs.  Pair sets are addressed by
linear index into the lexicographic enumeration of {(i, j) : i < j}, so
sampling without replacement is exact and cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import FeatureTable, RepresentationSet, check_aligned
from .errors import InvalidInputError


def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def pairs_from_indices(t: np.ndarray, n: int) -> np.ndarray:
    """Decode linear pair indices into (i, j) rows with i < j.

    Index t runs lexicographically: (0,1), (0,2), ..., (0,n-1), (1,2), ...
    """
    t = np.asarray(t, dtype=np.int64)
    # offsets[i] = index of pair (i, i+1); search gives the row index i
    i_range = np.arange(n, dtype=np.int64)
    offsets = i_range * n - (i_range * (i_range + 1)) // 2
    i = np.searchsorted(offsets, t, side="right") - 1
    j = t - offsets[i] + i + 1
    return np.stack([i, j], axis=1)


def all_pairs(n: int) -> np.ndarray:
    return pairs_from_indices(np.arange(pair_count(n), dtype=np.int64), n)


def sample_pairs(n: int, b: int, rng: np.random.Generator) -> np.ndarray:
    """b distinct unordered pairs drawn uniformly from the n(n-1)/2 total.

    Returns all pairs when b exceeds the population.  Output is a (b, 2)
    integer array with i < j in each row.
    """
    if n < 2:
        raise InvalidInputError("need at least 2 stimuli to form pairs")
    if b < 1:
        raise InvalidInputError("batch size must be positive")
    total = pair_count(n)
    if b >= total:
        return all_pairs(n)
    idx = rng.choice(total, size=b, replace=False)
    return pairs_from_indices(idx, n)


@dataclass(frozen=True)
class PairBatch:
    """Sampled pairs with their feature-distance rows and neural distances."""

    pairs: np.ndarray
    feature_distances: np.ndarray
    neural_distances: np.ndarray

    @property
    def size(self) -> int:
        return self.pairs.shape[0]


def assemble_batch(
    table: FeatureTable, reps: RepresentationSet, pairs: np.ndarray
) -> PairBatch:
    """Compute distance rows for the given (b, 2) pair index array."""
    check_aligned(table, reps)
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise InvalidInputError("pairs must be a (b, 2) index array")
    left, right = pairs[:, 0], pairs[:, 1]
    return PairBatch(
        pairs=pairs,
        feature_distances=table.pair_distances(left, right),
        neural_distances=reps.pair_distances(left, right),
    )


@dataclass(frozen=True)
class BatchSizeParams:
    """Knobs of the adaptive batch-size search."""

    num_probe_batches: int = 64
    initial_size: int = 4096
    growth: float = 1.2
    std_threshold: float = 0.01
    max_size: int | None = None

    def __post_init__(self):
        if self.num_probe_batches < 2:
            raise InvalidInputError("need at least 2 probe batches")
        if self.initial_size < 2:
            raise InvalidInputError("initial size must be at least 2")
        if not self.growth > 1.0:
            raise InvalidInputError("growth factor must exceed 1")
        if not self.std_threshold > 0:
            raise InvalidInputError("std threshold must be positive")


@dataclass(frozen=True)
class BatchSizeResult:
    size: int
    met_threshold: bool
    probed_sizes: tuple[int, ...]


def _probe_stable(
    table: FeatureTable, b: int, params: BatchSizeParams, rng: np.random.Generator
) -> bool:
    # Correlations are taken between all interaction-expanded distance
    # columns within each probe batch; the batch size is stable when the
    # standard error of every correlation across the probe ensemble sits
    # below the threshold.  Columns with no variance in a batch give no
    # estimate there; a column pair missing from more than half of the
    # probes counts as unstable (sparse features must force growth).
    from .importance import expand_rows

    n = table.n
    p = params.num_probe_batches
    estimates = []
    for _ in range(p):
        batch_pairs = sample_pairs(n, b, rng)
        rows = table.pair_distances(batch_pairs[:, 0], batch_pairs[:, 1])
        expanded = expand_rows(rows)
        centered = expanded - expanded.mean(axis=0, keepdims=True)
        std = centered.std(axis=0)
        safe = np.where(std > 0.0, std, 1.0)
        normed = centered / safe
        corr = normed.T @ normed / expanded.shape[0]
        corr[std == 0.0, :] = np.nan
        corr[:, std == 0.0] = np.nan
        iu = np.triu_indices(expanded.shape[1], k=1)
        estimates.append(corr[iu])
    estimates = np.asarray(estimates)
    valid = np.isfinite(estimates)
    n_valid = valid.sum(axis=0)
    if np.any(n_valid < (p + 1) // 2):
        return False
    means = np.nanmean(estimates, axis=0)
    variances = np.nansum((estimates - means) ** 2, axis=0) / np.maximum(n_valid - 1, 1)
    stderr = np.sqrt(variances / n_valid)
    return bool(np.all(stderr < params.std_threshold))


def select_batch_size(
    table: FeatureTable,
    params: BatchSizeParams | None = None,
    rng: np.random.Generator | None = None,
) -> BatchSizeResult:
    """Smallest batch size whose within-batch feature correlations are stable.

    Tries ceil(b0 * growth^t) for t = 0, 1, ... and returns the first
    size that passes the probe, capped at the total pair count (or the
    configured maximum).  When the cap is reached without passing,
    returns it with ``met_threshold=False``.
    """
    params = params or BatchSizeParams()
    rng = rng or np.random.default_rng()
    cap = pair_count(table.n)
    if params.max_size is not None:
        cap = min(cap, params.max_size)
    probed: list[int] = []
    t = 0
    while True:
        b = min(int(math.ceil(params.initial_size * params.growth**t)), cap)
        probed.append(b)
        if _probe_stable(table, b, params, rng):
            return BatchSizeResult(size=b, met_threshold=True, probed_sizes=tuple(probed))
        if b >= cap:
            return BatchSizeResult(size=cap, met_threshold=False, probed_sizes=tuple(probed))
        t += 1
