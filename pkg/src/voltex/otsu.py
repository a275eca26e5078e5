"""Multilevel between-class-variance thresholding.

The objective follows the classic construction: normalize the gray-level
histogram to probabilities, split the levels into m+1 classes by m strictly
increasing cut points, and score the split by the variance of the class means
around the global mean.  ``exhaustive_optimize`` is the slow, obviously
correct reference search; the metaheuristic fast path lives in ``wsa``.

Conventions (fixed here, asserted in tests):
  * a cut t puts value v in the left class iff v < t
  * empty classes have weight 0, mean 0, and contribute nothing to fitness
"""

import math
from dataclasses import dataclass
from itertools import combinations, islice

import numpy as np

from .errors import BudgetError, HistogramError, ThresholdError

EXHAUSTIVE_BUDGET = 5_000_000  # max combinations the reference search will enumerate


@dataclass(frozen=True)
class Histogram:
    """Per-level frequency counts of a gray image or volume."""

    counts: np.ndarray  # shape (levels,), nonnegative integers

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 2:
            raise HistogramError("histogram needs a 1-D count vector with >= 2 bins")
        if np.any(counts < 0):
            raise HistogramError("negative bin count")
        object.__setattr__(self, "counts", counts)

    @property
    def levels(self):
        return int(self.counts.size)

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass(frozen=True)
class OtsuPartition:
    """Class bookkeeping for one threshold vector: weights, means, fitness."""

    weights: np.ndarray      # per-class probability mass, sums to 1
    means: np.ndarray        # per-class mean level (0 for empty classes)
    global_mean: float
    fitness: float           # between-class variance


def normalize(hist):
    """Return the probability vector p_i = n_i / N."""
    n = hist.total
    if n == 0:
        raise HistogramError("empty histogram (N = 0)")
    return hist.counts.astype(np.float64) / n


def validate_thresholds(cuts, levels):
    """Check cuts are strictly increasing integers inside [1, levels-1]."""
    t = np.asarray(cuts, dtype=np.int64)
    if t.ndim != 1 or t.size == 0:
        raise ThresholdError("threshold vector must be non-empty and 1-D")
    if np.any(t < 1) or np.any(t > levels - 1):
        raise ThresholdError(f"cuts must lie in [1, {levels - 1}], got {t.tolist()}")
    if np.any(np.diff(t) <= 0):
        raise ThresholdError(f"cuts must be strictly increasing, got {t.tolist()}")
    return t


def evaluate(hist, cuts):
    """Score a threshold vector: class weights, class means, between-class variance."""
    t = validate_thresholds(cuts, hist.levels)
    p = normalize(hist)
    levels = np.arange(hist.levels, dtype=np.float64)
    bounds = np.concatenate(([0], t, [hist.levels]))

    m1 = t.size + 1
    weights = np.empty(m1)
    means = np.zeros(m1)
    for k in range(m1):
        lo, hi = bounds[k], bounds[k + 1]
        w = p[lo:hi].sum()
        weights[k] = w
        if w > 0:
            means[k] = (levels[lo:hi] * p[lo:hi]).sum() / w
    global_mean = float((weights * means).sum())
    fitness = float((weights * (means - global_mean) ** 2).sum())
    return OtsuPartition(weights=weights, means=means, global_mean=global_mean, fitness=fitness)


def total_variance(hist):
    """Variance of the full gray-level distribution (between + within)."""
    p = normalize(hist)
    levels = np.arange(hist.levels, dtype=np.float64)
    mu = (levels * p).sum()
    return float((p * (levels - mu) ** 2).sum())


def _prefix_sums(hist):
    """Cumulative (probability, level*probability) with a leading zero."""
    p = normalize(hist)
    cp = np.concatenate(([0.0], np.cumsum(p)))
    cs = np.concatenate(([0.0], np.cumsum(np.arange(hist.levels) * p)))
    return cp, cs


def exhaustive_optimize(hist, m, budget=EXHAUSTIVE_BUDGET):
    """Enumerate every valid m-cut vector and return the best one.

    Returns the lexicographically smallest vector attaining the maximum
    between-class variance, together with that fitness.  Raises BudgetError
    when C(levels-1, m) exceeds ``budget``.
    """
    levels = hist.levels
    if not 1 <= m <= levels - 1:
        raise ThresholdError(f"threshold count {m} invalid for {levels} levels")
    n_combos = math.comb(levels - 1, m)
    if n_combos > budget:
        raise BudgetError(
            f"C({levels - 1}, {m}) = {n_combos} combinations exceeds budget {budget}"
        )

    cp, cs = _prefix_sums(hist)
    global_mean = cs[-1]

    best_fitness = -1.0
    best_cuts = None
    combo_iter = combinations(range(1, levels), m)
    chunk = 65536
    while True:
        block = list(islice(combo_iter, chunk))
        if not block:
            break
        cuts = np.array(block, dtype=np.int64)
        bounds = np.hstack(
            [np.zeros((cuts.shape[0], 1), np.int64), cuts,
             np.full((cuts.shape[0], 1), levels, np.int64)]
        )
        w = cp[bounds[:, 1:]] - cp[bounds[:, :-1]]
        s = cs[bounds[:, 1:]] - cs[bounds[:, :-1]]
        mu = np.divide(s, w, out=np.zeros_like(s), where=w > 0)
        fitness = (w * (mu - global_mean) ** 2).sum(axis=1)
        i = int(np.argmax(fitness))
        # combinations() emits lexicographic order, so the first strict
        # improvement is automatically the smallest maximizing vector
        if fitness[i] > best_fitness:
            best_fitness = float(fitness[i])
            best_cuts = cuts[i].copy()

    return best_cuts, best_fitness
