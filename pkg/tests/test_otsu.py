"""Between-class variance objective and the exhaustive reference search."""

import numpy as np
import pytest

from voltex import otsu
from voltex.errors import BudgetError, HistogramError, ThresholdError


def spike_histogram(levels, spikes):
    counts = np.zeros(levels, dtype=np.int64)
    for level, count in spikes:
        counts[level] = count
    return otsu.Histogram(counts=counts)


def reference_partition(counts, cuts):
    """Term-by-term reimplementation: weights, means, global mean, fitness.

    Deliberately written as plain loops over explicit class membership so it
    shares no code path with the module under test.
    """
    n = sum(counts)
    p = [c / n for c in counts]
    bounds = [0] + list(cuts) + [len(counts)]
    weights, means = [], []
    for k in range(len(bounds) - 1):
        members = range(bounds[k], bounds[k + 1])
        w = sum(p[i] for i in members)
        mu = sum(i * p[i] / w for i in members) if w > 0 else 0.0
        weights.append(w)
        means.append(mu)
    mu_t = sum(w * mu for w, mu in zip(weights, means))
    fitness = sum(w * (mu - mu_t) ** 2 for w, mu in zip(weights, means))
    return weights, means, mu_t, fitness


class TestNormalize:
    def test_direct_division(self):
        h = otsu.Histogram(counts=np.array([2, 1, 1, 0]))
        assert otsu.normalize(h).tolist() == [0.5, 0.25, 0.25, 0.0]

    def test_single_bin_mass(self):
        h = spike_histogram(8, [(3, 17)])
        p = otsu.normalize(h)
        assert p[3] == 1.0 and p.sum() == 1.0

    def test_empty_histogram(self):
        h = otsu.Histogram(counts=np.zeros(4, dtype=np.int64))
        with pytest.raises(HistogramError):
            otsu.normalize(h)

    def test_sums_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            h = otsu.Histogram(counts=rng.integers(0, 100, size=32) + 1)
            assert abs(otsu.normalize(h).sum() - 1.0) <= 1e-12


class TestEvaluate:
    def test_two_spike_split(self):
        h = spike_histogram(256, [(10, 50), (200, 50)])
        part = otsu.evaluate(h, [100])
        assert part.weights.tolist() == [0.5, 0.5]
        assert part.means.tolist() == [10.0, 200.0]
        assert part.global_mean == 105.0
        assert part.fitness == 9025.0

    def test_single_spike_zero_fitness(self):
        h = spike_histogram(64, [(20, 99)])
        for t in ([5], [30], [5, 40]):
            assert otsu.evaluate(h, t).fitness == 0.0

    def test_matches_reference_reimplementation(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            counts = rng.integers(0, 50, size=16)
            counts[rng.integers(0, 16)] += 1  # never empty
            h = otsu.Histogram(counts=counts)
            part = otsu.evaluate(h, [5, 11])
            w, mu, mu_t, fit = reference_partition(counts.tolist(), [5, 11])
            np.testing.assert_allclose(part.weights, w, atol=1e-15)
            np.testing.assert_allclose(part.means, mu, atol=1e-12)
            assert abs(part.global_mean - mu_t) <= 1e-12
            assert abs(part.fitness - fit) <= 1e-9

    def test_weight_and_mean_identities(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            h = otsu.Histogram(counts=rng.integers(0, 40, size=32) + 1)
            part = otsu.evaluate(h, sorted(rng.choice(range(1, 32), 3, replace=False)))
            assert abs(part.weights.sum() - 1.0) <= 1e-12
            p = otsu.normalize(h)
            direct_mean = (np.arange(32) * p).sum()
            assert abs(part.global_mean - direct_mean) <= 1e-12

    def test_invalid_thresholds(self):
        h = spike_histogram(16, [(3, 5)])
        for bad in ([0], [16], [4, 4], [9, 2], []):
            with pytest.raises(ThresholdError):
                otsu.evaluate(h, bad)

    def test_scale_invariance(self):
        rng = np.random.default_rng(9)
        counts = rng.integers(1, 30, size=24)
        t = [4, 11, 19]
        a = otsu.evaluate(otsu.Histogram(counts=counts), t).fitness
        b = otsu.evaluate(otsu.Histogram(counts=counts * 7), t).fitness
        assert abs(a - b) <= 1e-9


class TestTotalVariance:
    def test_single_spike(self):
        assert otsu.total_variance(spike_histogram(32, [(7, 12)])) == 0.0

    def test_pure_classes_equal_between(self):
        h = spike_histogram(256, [(10, 50), (200, 50)])
        assert otsu.total_variance(h) == 9025.0

    def test_decomposition_identity(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            counts = rng.integers(0, 60, size=64)
            counts[0] += 1
            h = otsu.Histogram(counts=counts)
            m = int(rng.integers(1, 4))
            cuts = sorted(rng.choice(range(1, 64), m, replace=False))
            part = otsu.evaluate(h, cuts)
            p = otsu.normalize(h)
            bounds = [0] + list(cuts) + [64]
            within = 0.0
            for k in range(len(bounds) - 1):
                idx = np.arange(bounds[k], bounds[k + 1])
                within += (p[idx] * (idx - part.means[k]) ** 2).sum()
            total = otsu.total_variance(h)
            assert abs(part.fitness + within - total) <= 1e-9


class TestExhaustiveOptimize:
    def test_two_spike_smallest_cut(self):
        h = spike_histogram(256, [(10, 50), (200, 50)])
        cuts, fitness = otsu.exhaustive_optimize(h, 1)
        assert fitness == 9025.0
        assert cuts.tolist() == [11]

    def test_three_spike_separation(self):
        h = spike_histogram(128, [(5, 30), (50, 40), (120, 30)])
        cuts, fitness = otsu.exhaustive_optimize(h, 2)
        labels = np.searchsorted(cuts, [5, 50, 120], side="right")
        assert sorted(labels.tolist()) == [0, 1, 2]
        assert cuts.tolist() == [6, 51]  # lexicographically smallest maximizer

    def test_budget_exceeded(self):
        h = spike_histogram(256, [(1, 5), (99, 5)])
        with pytest.raises(BudgetError):
            otsu.exhaustive_optimize(h, 5)

    def test_brute_force_cross_check(self):
        rng = np.random.default_rng(12)
        counts = rng.integers(0, 30, size=16) + 1
        h = otsu.Histogram(counts=counts)
        best = max(
            (reference_partition(counts.tolist(), [t])[3], -t)
            for t in range(1, 16)
        )
        cuts, fitness = otsu.exhaustive_optimize(h, 1)
        assert abs(fitness - best[0]) <= 1e-12

    def test_dominates_random_vectors(self):
        rng = np.random.default_rng(13)
        counts = rng.integers(0, 50, size=32) + 1
        h = otsu.Histogram(counts=counts)
        _, best = otsu.exhaustive_optimize(h, 2)
        for _ in range(200):
            cuts = sorted(rng.choice(range(1, 32), 2, replace=False))
            assert otsu.evaluate(h, cuts).fitness <= best + 1e-12
