"""Detection and classification metrics.

Binary rates come from raw confusion counts; the 3-class problem reduces to
per-class one-vs-rest counts for rates and ROC curves.  Macro averages are
unweighted means over classes whose rate is defined (undefined ones are
reported, never silently zeroed); micro AUC pools every (sample, class)
pair into one binary problem.  ROC sweeps distinct scores descending with
tied scores moving together, and integrates by the trapezoid rule.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateError


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts."""

    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise DegenerateError("confusion counts must be nonnegative")

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class ScoredSample:
    """Per-class scores plus the true label."""

    scores: np.ndarray
    label: int

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise DegenerateError("scores must be finite")
        object.__setattr__(self, "scores", scores)


def f1(c):
    """2TP / (2TP + FP + FN)."""
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        raise DegenerateError("F1 undefined: no positives predicted or present")
    return 2 * c.tp / denom


def accuracy(c):
    if c.total == 0:
        raise DegenerateError("accuracy undefined on empty counts")
    return (c.tp + c.tn) / c.total


def sensitivity(c):
    if c.tp + c.fn == 0:
        raise DegenerateError("sensitivity undefined: no positive samples")
    return c.tp / (c.tp + c.fn)


def specificity(c):
    if c.tn + c.fp == 0:
        raise DegenerateError("specificity undefined: no negative samples")
    return c.tn / (c.tn + c.fp)


def binary_rates(c):
    """(accuracy, sensitivity, specificity); raises where undefined."""
    return accuracy(c), sensitivity(c), specificity(c)


def confusion_matrix(true_labels, predicted_labels, n_classes=3):
    """Rows are true classes, columns predicted."""
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        m[int(t), int(p)] += 1
    return m


def ovr_counts(matrix, positive_class):
    """Reduce a multi-class confusion to binary counts for one class."""
    m = np.asarray(matrix)
    k = positive_class
    tp = int(m[k, k])
    fn = int(m[k].sum() - m[k, k])
    fp = int(m[:, k].sum() - m[k, k])
    tn = int(m.sum() - tp - fn - fp)
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


@dataclass(frozen=True)
class OvrRates:
    """Per-class and macro-averaged rates; ``undefined`` lists exclusions."""

    per_class: tuple      # tuples (accuracy, sensitivity, specificity), None where undefined
    macro_accuracy: float
    macro_sensitivity: float
    macro_specificity: float
    undefined: tuple      # (class index, rate name) pairs excluded from macros


def ovr_rates(matrix):
    """One-vs-rest rates per class plus their unweighted macro averages."""
    m = np.asarray(matrix)
    if m.sum() == 0:
        raise DegenerateError("empty confusion matrix")
    per_class = []
    undefined = []
    pools = {"accuracy": [], "sensitivity": [], "specificity": []}
    for k in range(m.shape[0]):
        counts = ovr_counts(m, k)
        rates = []
        for name, fn_rate in (
            ("accuracy", accuracy),
            ("sensitivity", sensitivity),
            ("specificity", specificity),
        ):
            try:
                value = fn_rate(counts)
                pools[name].append(value)
            except DegenerateError:
                value = None
                undefined.append((k, name))
            rates.append(value)
        per_class.append(tuple(rates))

    def macro(name):
        if not pools[name]:
            raise DegenerateError(f"macro {name} undefined for every class")
        return float(np.mean(pools[name]))

    return OvrRates(
        per_class=tuple(per_class),
        macro_accuracy=macro("accuracy"),
        macro_sensitivity=macro("sensitivity"),
        macro_specificity=macro("specificity"),
        undefined=tuple(undefined),
    )


def _binary_roc(labels, scores):
    """ROC points and trapezoidal AUC for one binary problem."""
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateError("ROC needs at least one positive and one negative")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tps = np.cumsum(sorted_labels)
    fps = np.cumsum(~sorted_labels)
    # keep only the last index of each tied-score group: ties move together
    keep = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tpr = np.r_[0.0, tps[keep] / n_pos]
    fpr = np.r_[0.0, fps[keep] / n_neg]
    auc = float(np.trapezoid(tpr, fpr))
    return list(zip(fpr.tolist(), tpr.tolist())), auc


def roc_curve(samples, positive_class):
    """One-vs-rest ROC for one class; returns (points, auc)."""
    labels = [s.label == positive_class for s in samples]
    scores = [float(s.scores[positive_class]) for s in samples]
    return _binary_roc(labels, scores)


def micro_ovr_auc(samples):
    """AUC of the pooled (sample, class) binary instances."""
    if not samples:
        raise DegenerateError("no samples")
    pooled_labels, pooled_scores = [], []
    for s in samples:
        for k in range(len(s.scores)):
            pooled_labels.append(s.label == k)
            pooled_scores.append(float(s.scores[k]))
    _, micro = _binary_roc(pooled_labels, pooled_scores)
    return micro


def ovr_auc(samples):
    """(macro, micro, per-class) one-vs-rest AUCs.

    Macro averages the per-class AUCs; micro pools every (sample, class)
    pair into a single binary ranking problem.
    """
    if not samples:
        raise DegenerateError("no samples")
    n_classes = len(samples[0].scores)
    per_class = []
    for k in range(n_classes):
        _, auc = roc_curve(samples, k)
        per_class.append(auc)
    macro = float(np.mean(per_class))
    return macro, micro_ovr_auc(samples), per_class


def kfold_split(n_items, k=10, seed=0):
    """Seeded shuffle into k folds whose sizes differ by at most one.

    Returns an int array: element i is the fold of item i.
    """
    if k < 2:
        raise ConfigError(f"need k >= 2 folds, got {k}")
    if n_items < k:
        raise ConfigError(f"cannot split {n_items} items into {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_items)
    folds = np.empty(n_items, dtype=np.int64)
    base = n_items // k
    extra = n_items % k
    start = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        folds[order[start : start + size]] = fold
        start += size
    return folds
