"""Synthetic datasets with a known ground-truth metric.

The generator plants a random SPD weight matrix, computes exact
ground-truth distances over random binary feature tables, embeds those
distances into d dimensions with classical (Torgerson) MDS, and adds
per-dimension scaled Gaussian noise.  Planted distances of this form
are generally not exactly Euclidean, so the spectral embedding drops
the negative-eigenvalue residual; the achieved fidelity is measured and
carried in the dataset metadata so downstream comparisons stay honest.
An optional stress-majorization refinement pass can tighten the
embedding; it is off by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Feature, FeatureTable, RepresentationSet
from .errors import InvalidInputError

_STREAM_SYNTH = 61


@dataclass(frozen=True)
class SynthConfig:
    n: int = 256
    m: int = 16
    d: int = 768
    noise_level: float = 0.0
    seed: int = 0
    refine_iterations: int = 0

    def __post_init__(self):
        if self.n < 2 or self.m < 1 or self.d < 1:
            raise InvalidInputError("need n >= 2, m >= 1, d >= 1")
        if self.noise_level < 0:
            raise InvalidInputError("noise level must be nonnegative")
        if self.refine_iterations < 0:
            raise InvalidInputError("refine iterations must be nonnegative")


def make_spd(m: int, rng: np.random.Generator) -> np.ndarray:
    """Random SPD matrix with unit Frobenius norm (Gram plus small ridge)."""
    G = rng.normal(size=(m, m))
    W = G @ G.T + 1e-3 * m * np.eye(m)
    return W / np.linalg.norm(W)


def sample_binary_features(n: int, m: int, rng: np.random.Generator) -> FeatureTable:
    """n stimuli with m independent fair-coin A/B nominal features."""
    draws = rng.random((n, m)) < 0.5
    features = tuple(
        Feature.nominal(f"f{k + 1}", ["A" if v else "B" for v in draws[:, k]])
        for k in range(m)
    )
    ids = tuple(f"s{i}" for i in range(n))
    return FeatureTable(stimulus_ids=ids, features=features)


@dataclass(frozen=True)
class GroundTruth:
    """Planted weight matrix and its exact pairwise distances."""

    W: np.ndarray
    table: FeatureTable

    def distance(self, i: int, j: int) -> float:
        rows = self.table.pair_distances(np.array([i]), np.array([j]))
        return float(np.sqrt(max(rows[0] @ self.W @ rows[0], 0.0)))

    def distance_matrix(self) -> np.ndarray:
        n = self.table.n
        ii, jj = np.triu_indices(n, k=1)
        rows = self.table.pair_distances(ii, jj)
        quad = np.einsum("bi,ij,bj->b", rows, self.W, rows)
        D = np.zeros((n, n))
        D[ii, jj] = D[jj, ii] = np.sqrt(np.maximum(quad, 0.0))
        return D


def ground_truth_distances(table: FeatureTable, W: np.ndarray) -> GroundTruth:
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (table.m, table.m):
        raise InvalidInputError("weight matrix does not match the feature count")
    return GroundTruth(W=W, table=table)


@dataclass(frozen=True)
class MdsInfo:
    max_rel_error: float
    n_positive: int
    dropped_negative_mass: float
    truncated: bool


def embedding_fidelity(Y: np.ndarray, D: np.ndarray) -> float:
    """Max relative discrepancy between embedded and target distances.

    Pairs with zero target distance are exactly preserved by coincident
    embedding points and are excluded from the ratio.
    """
    gram = Y @ Y.T
    sq = np.diag(gram)
    dd = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * gram, 0.0))
    iu = np.triu_indices(D.shape[0], k=1)
    target = D[iu]
    achieved = dd[iu]
    mask = target > 1e-12
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(achieved[mask] - target[mask]) / target[mask]))


def classical_mds(D: np.ndarray, d: int) -> tuple[np.ndarray, MdsInfo]:
    """Torgerson embedding of a distance matrix into d dimensions.

    Double-centers the squared distances, keeps the nonnegative part of
    the spectrum in descending order, and scales eigenvectors by root
    eigenvalues.  Columns beyond the positive rank are zero padded; when
    d is smaller than the positive rank the trailing components are
    truncated and the info flag records it.
    """
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    if D.shape != (n, n):
        raise InvalidInputError("distance matrix must be square")
    if not np.allclose(D, D.T, atol=1e-9) or np.abs(np.diag(D)).max() > 1e-9:
        raise InvalidInputError("distance matrix must be symmetric with zero diagonal")
    if D.min() < 0:
        raise InvalidInputError("distances must be nonnegative")
    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ (D * D) @ J
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    positive = evals > 1e-12 * max(evals.max(), 1.0)
    n_positive = int(positive.sum())
    Y_full = evecs[:, positive] * np.sqrt(evals[positive])
    truncated = n_positive > d
    if truncated:
        Y = Y_full[:, :d].copy()
    else:
        Y = np.zeros((n, d))
        Y[:, :n_positive] = Y_full
    neg_mass = float(-evals[evals < 0].sum())
    pos_mass = float(evals[positive].sum())
    info = MdsInfo(
        max_rel_error=embedding_fidelity(Y, D),
        n_positive=n_positive,
        dropped_negative_mass=neg_mass / pos_mass if pos_mass > 0 else 0.0,
        truncated=truncated,
    )
    return Y, info


def refine_embedding(Y: np.ndarray, D: np.ndarray, iterations: int) -> np.ndarray:
    """Stress-majorization (Guttman transform) passes over the embedding."""
    Y = np.array(Y, dtype=np.float64)
    n = Y.shape[0]
    for _ in range(iterations):
        gram = Y @ Y.T
        sq = np.diag(gram)
        dd = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * gram, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dd > 1e-12, D / dd, 0.0)
        np.fill_diagonal(ratio, 0.0)
        B = -ratio
        B[np.diag_indices(n)] = ratio.sum(axis=1)
        Y = B @ Y / n
    return Y


def add_noise(Y: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Add Gaussian noise scaled per dimension by its sample std times level."""
    if level < 0:
        raise InvalidInputError("noise level must be nonnegative")
    Y = np.asarray(Y, dtype=np.float64)
    if level == 0:
        return Y.copy()
    sd = Y.std(axis=0, ddof=1)
    return Y + level * sd[None, :] * rng.normal(size=Y.shape)


@dataclass(frozen=True)
class SynthDataset:
    config: SynthConfig
    table: FeatureTable
    reps: RepresentationSet
    ground_truth: GroundTruth
    mds_info: MdsInfo


def generate_dataset(config: SynthConfig) -> SynthDataset:
    """Feature table, noisy embedded representations, and the planted metric."""
    rng = np.random.default_rng(np.random.SeedSequence((int(config.seed), _STREAM_SYNTH)))
    table = sample_binary_features(config.n, config.m, rng)
    W = make_spd(config.m, rng)
    truth = ground_truth_distances(table, W)
    D = truth.distance_matrix()
    Y, info = classical_mds(D, config.d)
    if config.refine_iterations:
        Y = refine_embedding(Y, D, config.refine_iterations)
        info = MdsInfo(
            max_rel_error=embedding_fidelity(Y, D),
            n_positive=info.n_positive,
            dropped_negative_mass=info.dropped_negative_mass,
            truncated=info.truncated,
        )
    noisy = add_noise(Y, config.noise_level, rng)
    return SynthDataset(
        config=config,
        table=table,
        reps=RepresentationSet(noisy),
        ground_truth=truth,
        mds_info=info,
    )
