import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdmfusion.balance import (OversampleConfig, adaptive_oversample, bin_frequencies, bin_index, class_weights,
                               inverse_log_transform, kmeans, log_transform)
from sdmfusion.covariates import CovariateVector
from sdmfusion.geo import BoundingBox, make_grid
from sdmfusion.occurrence import CellSample
from sdmfusion.testkit import brute_force_assignment

GRID = make_grid(BoundingBox(-30.0, 150.0, -28.0, 152.0))


def _samples(countries):
    return [CellSample(GRID[i], 1, c) for i, c in enumerate(countries)]


def _with_counts(counts, seed=0):
    rng = np.random.default_rng(seed)
    return [CellSample(GRID[i], int(c), "AU", CovariateVector(tuple(rng.normal(size=10))))
            for i, c in enumerate(counts)]


class TestClassWeights:
    def test_reference_proportions(self):
        w = class_weights(_samples(["AU"] * 82 + ["SA"] * 11 + ["CR"] * 7))
        assert w["AU"] == pytest.approx(100 / 82 * 3, abs=1e-9)
        assert w["AU"] == pytest.approx(3.6585, abs=1e-4)
        assert w["SA"] == pytest.approx(27.2727, abs=1e-4)
        assert w["CR"] == pytest.approx(42.8571, abs=1e-4)

    def test_single_class(self):
        assert class_weights(_samples(["SA"] * 9)).weights == {"SA": 1.0}

    def test_equal_counts(self):
        # N_total / N_x = 3 for every class, times C = 3
        w = class_weights(_samples(["AU", "SA", "CR"] * 4))
        for v in w.weights.values():
            assert v == pytest.approx(9.0, abs=1e-12)

    @given(st.lists(st.sampled_from(["AU", "SA", "CR"]), min_size=1, max_size=200))
    def test_each_class_carries_equal_mass(self, countries):
        w = class_weights(_samples(countries))
        n = Counter(countries)
        for c in n:
            assert n[c] * w[c] == pytest.approx(len(countries) * len(n), rel=1e-12)

    def test_for_samples_and_empty(self):
        w = class_weights(_samples(["AU", "AU", "SA"]))
        np.testing.assert_allclose(w.for_samples(["SA", "AU"]), [6.0, 3.0])
        with pytest.raises(ValueError):
            class_weights([])


class TestKMeans:
    def test_two_blobs(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(0, 0.1, (30, 2)), rng.normal(5, 0.1, (30, 2))])
        res = kmeans(X, 2, seed=1)
        assert len(set(res.labels[:30])) == 1 and len(set(res.labels[30:])) == 1
        assert res.labels[0] != res.labels[-1]
        np.testing.assert_array_equal(res.labels, brute_force_assignment(X, res.centroids))

    @given(arrays(np.float64, st.tuples(st.integers(3, 40), st.integers(1, 3)), elements=st.floats(-10, 10)),
           st.integers(1, 3), st.integers(0, 100))
    def test_monotone_inertia_and_assignment(self, X, k, seed):
        k = min(k, len(X))
        res = kmeans(X, k, seed=seed)
        h = np.array(res.inertia_history)
        assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))
        assert res.inertia <= h[-1] + 1e-9 * max(1.0, h[0])
        d = ((X[:, None] - res.centroids[None]) ** 2).sum(axis=2)
        np.testing.assert_allclose(d[np.arange(len(X)), res.labels], d.min(axis=1), atol=1e-9)

    def test_seeded(self):
        X = np.random.default_rng(2).normal(size=(50, 3))
        a, b = kmeans(X, 4, seed=7), kmeans(X, 4, seed=7)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((3, 2)), 4)


class TestBins:
    def test_index(self):
        bins = ((1, 10), (11, 40), (101, None))
        assert [bin_index(c, bins) for c in (0, 1, 10, 11, 60, 5000)] == [-1, 0, 0, 1, -1, 2]

    def test_config_validation(self):
        with pytest.raises(ValueError, match="disjoint"):
            OversampleConfig(count_bins=((1, 10), (5, 20)))
        with pytest.raises(ValueError):
            OversampleConfig(n_clusters=0)


class TestAdaptiveOversample:
    bins = ((1, 10), (40, 50))

    def test_minority_bin_grows(self):
        rng = np.random.default_rng(1)
        samples = _with_counts(list(rng.integers(1, 11, 100)) + list(rng.integers(40, 51, 10)))
        out = adaptive_oversample(samples, OversampleConfig(n_clusters=4, target_per_bin=50, count_bins=self.bins))
        before, after = bin_frequencies(samples, self.bins), bin_frequencies(out, self.bins)
        assert before == [100, 10]
        assert after[0] == 100
        assert 10 < after[1] <= 50
        assert after[1] == 20  # each original used at most once

    def test_balanced_input_unchanged(self):
        samples = _with_counts([5] * 8 + [45] * 8)
        out = adaptive_oversample(samples, OversampleConfig(n_clusters=2, count_bins=self.bins))
        assert out == samples

    def test_copies_are_marked_and_unique(self):
        samples = _with_counts([3] * 40 + [45] * 12)
        out = adaptive_oversample(samples, OversampleConfig(n_clusters=3, count_bins=self.bins))
        assert out[:len(samples)] == samples
        copies = out[len(samples):]
        assert all(c.origin == "oversampled" and c.count == 45 for c in copies)
        assert len({c.key for c in copies}) == len(copies) == 12

    def test_round_robin_covers_every_cluster(self):
        rng = np.random.default_rng(5)
        centres = [np.zeros(10), np.full(10, 8.0), np.full(10, -8.0)]
        minority = [CellSample(GRID[i], 45, "AU", CovariateVector(tuple(centres[i % 3] + rng.normal(0, .1, 10))))
                    for i in range(30)]
        majority = _with_counts([2] * 60, seed=9)
        majority = [CellSample(GRID[100 + i], s.count, "AU", s.covariates) for i, s in enumerate(majority)]
        out = adaptive_oversample(minority + majority,
                                  OversampleConfig(n_clusters=3, target_per_bin=33, count_bins=self.bins))
        picked = [s.key[1] % 3 for s in out[90:]]  # GRID rows are long, so col index i keeps i % 3
        assert sorted(Counter(picked).values()) == [1, 1, 1]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    @given(st.lists(st.integers(0, 200), min_size=8, max_size=80), st.integers(0, 50))
    def test_frequencies_move_toward_target(self, counts, seed):
        samples = _with_counts(counts, seed)
        cfg = OversampleConfig(n_clusters=2, seed=seed)
        out = adaptive_oversample(samples, cfg)
        before = bin_frequencies(samples, cfg.count_bins)
        after = bin_frequencies(out, cfg.count_bins)
        target = max(before)
        assert out[:len(samples)] == samples
        for b, a in zip(before, after):
            assert b <= a <= max(b, min(target, 2 * b))
            assert abs(target - a) <= abs(target - b)

    def test_needs_covariates(self):
        samples = [CellSample(GRID[i], 1 if i < 10 else 50, "AU") for i in range(12)]
        with pytest.raises(ValueError, match="covariates"):
            adaptive_oversample(samples, OversampleConfig(n_clusters=1))

    def test_small_bin_reduces_k_with_warning(self):
        samples = _with_counts([3] * 20 + [45] * 2)
        with pytest.warns(RuntimeWarning, match="n_clusters"):
            out = adaptive_oversample(samples, OversampleConfig(n_clusters=4, count_bins=self.bins))
        assert len(out) == 24


class TestLogTransform:
    def test_values(self):
        assert log_transform(0.0) == 0.0
        assert log_transform(math.e - 1) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("y", [0.0, 1.0, 10.0, 1000.0])
    def test_round_trip(self, y):
        assert inverse_log_transform(log_transform(y)) == pytest.approx(y, abs=1e-9)

    def test_array_and_negative(self):
        np.testing.assert_allclose(log_transform(np.array([0.0, 3.0])), [0.0, math.log(4.0)])
        with pytest.raises(ValueError):
            log_transform(-1.0)
