"""Permutation importance over features and feature interactions.

A fitted weight matrix scores a pair through the quadratic form
p^T W p.  Flattening the form turns every entry of W (feature k alone,
or the interaction of features k and l) into one coordinate of an
expanded input vector of length m(m+1)/2, with off-diagonal products
doubled to account for symmetry.  Permutation importance then applies
unchanged: permute one expanded column across sampled pairs and measure
the average drop in Spearman correlation.  Ten permutations are enough
in practice; the per-permutation scores are kept in the report.

Also provides the two profile-comparison metrics used to benchmark
methods: plain Frobenius distance between weight matrices, and the
symmetrized hyperbolically weighted Kendall tau between importance
profiles (disagreements among top-ranked entries weigh more).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, InvalidInputError
from .model import MLEM, _check_variant
from .pairs import PairBatch
from .softrank import spearman_exact

_STREAM_PERMUTATION = 51


def interaction_pairs(m: int) -> list[tuple[int, int]]:
    """Index pairs (k, l) with k <= l in the fixed expansion order."""
    return [(k, l) for k in range(m) for l in range(k, m)]


def interaction_names(feature_names: list[str]) -> list[str]:
    names = []
    for k, l in interaction_pairs(len(feature_names)):
        if k == l:
            names.append(feature_names[k])
        else:
            names.append(f"{feature_names[k]} × {feature_names[l]}")
    return names


def expand_interactions(p: np.ndarray) -> np.ndarray:
    """Feature-distance vector -> length m(m+1)/2 product expansion."""
    return expand_rows(np.asarray(p, dtype=np.float64)[None, :])[0]


def expand_rows(rows: np.ndarray) -> np.ndarray:
    """Row-wise expansion of a (b, m) matrix to (b, m(m+1)/2)."""
    rows = np.asarray(rows, dtype=np.float64)
    b, m = rows.shape
    out = np.empty((b, m * (m + 1) // 2), dtype=np.float64)
    col = 0
    for k in range(m):
        out[:, col] = rows[:, k] * rows[:, k]
        col += 1
        width = m - k - 1
        if width:
            out[:, col : col + width] = 2.0 * rows[:, k : k + 1] * rows[:, k + 1 :]
            col += width
    return out


def pack_weights(W: np.ndarray) -> np.ndarray:
    """Upper-triangle entries of W in expansion order (one per column)."""
    W = np.asarray(W, dtype=np.float64)
    m = W.shape[0]
    return np.array([W[k, l] for k, l in interaction_pairs(m)])


def h_w(expanded: np.ndarray, W: np.ndarray, variant: str) -> np.ndarray:
    """Score expanded rows with W; identical to the pair-level prediction.

    For the SPD variant the radicand is clamped at zero against float
    round-off before the square root; the unconstrained variant returns
    the raw weighted sum.
    """
    _check_variant(variant)
    expanded = np.atleast_2d(np.asarray(expanded, dtype=np.float64))
    weights = pack_weights(W)
    if expanded.shape[1] != weights.shape[0]:
        raise InvalidInputError(
            f"expanded rows have width {expanded.shape[1]}, expected {weights.shape[0]}"
        )
    q = expanded @ weights
    if variant == MLEM:
        return np.sqrt(np.maximum(q, 0.0))
    return q


@dataclass(frozen=True)
class ImportanceEntry:
    name: str
    feature_k: int
    feature_l: int
    importance: float
    per_permutation_scores: tuple[float, ...]


@dataclass(frozen=True)
class ImportanceReport:
    entries: tuple[ImportanceEntry, ...]
    baseline_score: float
    n_permutations: int
    n_pairs: int

    def by_name(self) -> dict[str, ImportanceEntry]:
        return {e.name: e for e in self.entries}

    def profile(self) -> np.ndarray:
        return np.array([e.importance for e in self.entries])


def permutation_importance(
    model,
    batch: PairBatch,
    n_permutations: int = 10,
    seed: int = 0,
) -> ImportanceReport:
    """Average Spearman drop per expanded column under random permutations.

    Baseline and permuted scores are computed on the identical pair set,
    so the difference isolates the permutation effect.  Each (column,
    permutation) draw has its own seeded stream, making the report
    independent of evaluation order.
    """
    if batch.size < 2:
        raise InvalidInputError("need at least 2 pairs")
    expanded = expand_rows(batch.feature_distances)
    targets = batch.neural_distances
    baseline = spearman_exact(h_w(expanded, model.W, model.variant), targets)
    names = interaction_names(list(model.feature_names))
    entries = []
    for col, (k, l) in enumerate(interaction_pairs(model.m)):
        scores = []
        for perm_index in range(n_permutations):
            rng = np.random.default_rng(
                np.random.SeedSequence((int(seed), _STREAM_PERMUTATION, col, perm_index))
            )
            shuffled = expanded.copy()
            shuffled[:, col] = expanded[rng.permutation(batch.size), col]
            scores.append(
                spearman_exact(h_w(shuffled, model.W, model.variant), targets)
            )
        entries.append(
            ImportanceEntry(
                name=names[col],
                feature_k=k,
                feature_l=l,
                importance=float(baseline - np.mean(scores)),
                per_permutation_scores=tuple(float(s) for s in scores),
            )
        )
    return ImportanceReport(
        entries=tuple(entries),
        baseline_score=float(baseline),
        n_permutations=n_permutations,
        n_pairs=batch.size,
    )


def frobenius_distance(W1: np.ndarray, W2: np.ndarray) -> float:
    W1 = np.asarray(W1, dtype=np.float64)
    W2 = np.asarray(W2, dtype=np.float64)
    if W1.shape != W2.shape:
        raise InvalidInputError(f"shape mismatch: {W1.shape} vs {W2.shape}")
    return float(np.linalg.norm(W1 - W2))


def _competition_ranks_descending(scores: np.ndarray) -> np.ndarray:
    # rank 0 = largest score; exact ties broken stably by index
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(len(scores), dtype=np.float64)
    return ranks


def weighted_tau(R: np.ndarray, S: np.ndarray) -> float:
    """Symmetrized hyperbolically weighted Kendall tau of two score lists.

    Pair (i, j) is weighted by 1/(rank_i + 1) + 1/(rank_j + 1) with ranks
    taken descending from 0; the statistic is averaged over weighting by
    R's ranks and by S's ranks.  Exact score ties contribute sign 0.
    """
    R = np.asarray(R, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if R.shape != S.shape or R.ndim != 1 or len(R) < 2:
        raise InvalidInputError("inputs must be equal-length vectors with n >= 2")
    if np.all(R == R[0]) or np.all(S == S[0]):
        raise DegenerateDataError("weighted tau undefined for an all-tied list")
    sign_prod = np.sign(R[:, None] - R[None, :]) * np.sign(S[:, None] - S[None, :])
    iu = np.triu_indices(len(R), k=1)

    def one_side(scores: np.ndarray) -> float:
        inv = 1.0 / (_competition_ranks_descending(scores) + 1.0)
        weights = (inv[:, None] + inv[None, :])[iu]
        return float(np.sum(weights * sign_prod[iu]) / np.sum(weights))

    return 0.5 * (one_side(R) + one_side(S))
