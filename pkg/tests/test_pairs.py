import itertools

import numpy as np
import pytest

from mlem.data import Feature, FeatureTable, RepresentationSet, feature_distance, neural_distance
from mlem.pairs import (
    BatchSizeParams,
    all_pairs,
    assemble_batch,
    pair_count,
    pairs_from_indices,
    sample_pairs,
    select_batch_size,
)
from mlem.synth import sample_binary_features


def random_table(n, m, seed):
    rng = np.random.default_rng(seed)
    feats = tuple(
        Feature.nominal(f"f{k}", [str(x) for x in rng.integers(0, 3, n)])
        for k in range(m)
    )
    return FeatureTable(tuple(f"s{i}" for i in range(n)), feats)


class TestSamplePairs:
    def test_exhaustive_small(self):
        pairs = sample_pairs(3, 3, np.random.default_rng(0))
        assert sorted(map(tuple, pairs)) == [(0, 1), (0, 2), (1, 2)]

    def test_requested_count_distinct(self):
        pairs = sample_pairs(256, 4096, np.random.default_rng(1))
        assert pairs.shape == (4096, 2)
        assert len({tuple(p) for p in pairs}) == 4096
        assert np.all(pairs[:, 0] < pairs[:, 1])

    def test_over_requesting_returns_all(self):
        pairs = sample_pairs(10, 10_000, np.random.default_rng(2))
        assert len(pairs) == pair_count(10)

    def test_same_seed_same_pairs(self):
        a = sample_pairs(50, 100, np.random.default_rng(7))
        b = sample_pairs(50, 100, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_index_decoding_roundtrip(self):
        n = 23
        expected = np.array(list(itertools.combinations(range(n), 2)))
        decoded = pairs_from_indices(np.arange(pair_count(n)), n)
        np.testing.assert_array_equal(decoded, expected)


class TestAssembleBatch:
    def test_identical_stimuli_zero_rows(self):
        table = FeatureTable(
            ("a", "b"), (Feature.nominal("x", ["A", "A"]), Feature.ordinal("y", [2.0, 2.0]))
        )
        reps = RepresentationSet(np.array([[1.0, 1.0], [1.0, 1.0]]))
        batch = assemble_batch(table, reps, np.array([[0, 1]]))
        np.testing.assert_allclose(batch.feature_distances, [[0.0, 0.0]])
        np.testing.assert_allclose(batch.neural_distances, [0.0])

    def test_single_differing_feature_indicator(self):
        table = FeatureTable(
            ("a", "b"),
            (Feature.nominal("x", ["A", "B"]), Feature.nominal("y", ["C", "C"])),
        )
        reps = RepresentationSet(np.eye(2))
        batch = assemble_batch(table, reps, np.array([[0, 1]]))
        np.testing.assert_allclose(batch.feature_distances, [[1.0, 0.0]])

    def test_matches_full_matrix_oracle(self):
        n, m = 17, 4
        table = random_table(n, m, seed=3)
        reps = RepresentationSet(np.random.default_rng(4).normal(size=(n, 6)))
        batch = assemble_batch(table, reps, all_pairs(n))
        for t, (i, j) in enumerate(batch.pairs):
            assert batch.neural_distances[t] == pytest.approx(
                neural_distance(reps, i, j), abs=1e-12
            )
            for k in range(m):
                assert batch.feature_distances[t, k] == pytest.approx(
                    feature_distance(table, k, i, j), abs=1e-12
                )

    def test_mismatched_sizes_rejected(self):
        table = random_table(5, 2, seed=5)
        reps = RepresentationSet(np.zeros((4, 2)) + np.eye(4, 2))
        with pytest.raises(Exception):
            assemble_batch(table, reps, np.array([[0, 1]]))


class TestSelectBatchSize:
    def test_infinite_threshold_returns_initial(self):
        table = random_table(40, 3, seed=6)
        params = BatchSizeParams(initial_size=8, std_threshold=np.inf)
        result = select_batch_size(table, params, np.random.default_rng(0))
        assert result.size == 8
        assert result.met_threshold

    def test_balanced_accepts_first_size(self):
        table = sample_binary_features(256, 4, np.random.default_rng(10))
        result = select_batch_size(table, BatchSizeParams(), np.random.default_rng(11))
        assert result.size == 4096
        assert result.met_threshold

    def test_sparse_feature_forces_growth(self):
        rng = np.random.default_rng(12)
        n = 256
        labels = ["B"] * n
        labels[0] = "A"
        base = sample_binary_features(n, 3, rng)
        table = FeatureTable(
            base.stimulus_ids, base.features + (Feature.nominal("sparse", labels),)
        )
        result = select_batch_size(table, BatchSizeParams(), np.random.default_rng(13))
        assert result.size > 4096 or not result.met_threshold

    def test_looser_threshold_never_larger(self):
        table = sample_binary_features(64, 3, np.random.default_rng(14))
        sizes = []
        for sigma in (0.002, 0.01, 0.05):
            params = BatchSizeParams(initial_size=64, std_threshold=sigma, max_size=1500)
            sizes.append(select_batch_size(table, params, np.random.default_rng(15)).size)
        assert sizes == sorted(sizes, reverse=True)

    def test_size_follows_geometric_schedule(self):
        table = sample_binary_features(64, 3, np.random.default_rng(16))
        params = BatchSizeParams(initial_size=64, std_threshold=0.004, max_size=1800)
        result = select_batch_size(table, params, np.random.default_rng(17))
        allowed = {min(int(np.ceil(64 * 1.2**t)), 1800) for t in range(40)}
        assert result.size in allowed
        for probed in result.probed_sizes:
            assert probed in allowed

    def test_cap_with_warning_when_unreachable(self):
        # cap below the full population, so probes stay noisy
        table = random_table(24, 2, seed=18)
        params = BatchSizeParams(initial_size=16, std_threshold=1e-9, max_size=100)
        result = select_batch_size(table, params, np.random.default_rng(19))
        assert result.size == 100
        assert not result.met_threshold

    def test_full_population_cap_has_zero_variability(self):
        table = random_table(24, 2, seed=18)
        params = BatchSizeParams(initial_size=16, std_threshold=1e-9)
        result = select_batch_size(table, params, np.random.default_rng(19))
        assert result.size == pair_count(24)
        assert result.met_threshold
