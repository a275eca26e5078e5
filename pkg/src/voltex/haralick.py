"""Scalar texture descriptors of a co-occurrence matrix.

Sixteen statistics per matrix: the fourteen classic co-occurrence features
(energy/ASM, contrast, correlation, sum-of-squares variance, inverse
difference moment, sum average, sum variance, sum entropy, entropy,
difference variance, difference entropy, the two information measures of
correlation, and the maximal correlation coefficient) plus autocorrelation
and dissimilarity.  Entropy-family terms use the natural log and skip
zero-probability cells (0*log 0 := 0).

Degenerate conventions, fixed here and asserted in tests: correlation is 0
when either marginal is constant, IMC1 is 0 when both marginal entropies
vanish, and the maximal correlation coefficient is 0 when the support has
rank <= 1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGlcmError
from .glcm import MODE_2D, GlcmSequence

DESCRIPTOR_NAMES = (
    "energy",
    "contrast",
    "correlation",
    "variance",
    "homogeneity",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "imc1",
    "imc2",
    "max_correlation_coefficient",
    "autocorrelation",
    "dissimilarity",
)


@dataclass(frozen=True)
class HaralickVector:
    """The sixteen descriptors of one co-occurrence matrix."""

    energy: float
    contrast: float
    correlation: float
    variance: float
    homogeneity: float
    sum_average: float
    sum_variance: float
    sum_entropy: float
    entropy: float
    difference_variance: float
    difference_entropy: float
    imc1: float
    imc2: float
    max_correlation_coefficient: float
    autocorrelation: float
    dissimilarity: float

    def as_array(self, names=DESCRIPTOR_NAMES):
        return np.array([getattr(self, n) for n in names], dtype=np.float64)


def _entropy(p):
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _max_correlation(probs, px, py):
    """sqrt of the second-largest eigenvalue of the Q matrix on the support."""
    rows = np.where(px > 0)[0]
    cols = np.where(py > 0)[0]
    if rows.size <= 1 or cols.size <= 1:
        return 0.0
    p = probs[np.ix_(rows, cols)]
    # Q[i, j] = sum_k p(i, k) p(j, k) / (px(i) py(k))
    q = (p / px[rows][:, None]) @ (p / py[cols]).T
    eigvals = np.sort(np.real(np.linalg.eigvals(q)))
    second = eigvals[-2] if eigvals.size >= 2 else 0.0
    return float(np.sqrt(max(second, 0.0)))


def haralick(g):
    """Compute the sixteen descriptors of a non-empty matrix."""
    if g.empty:
        raise EmptyGlcmError("no pairs: descriptors undefined")
    p = g.probs
    n = g.levels
    i = np.arange(n, dtype=np.float64)
    ii, jj = np.meshgrid(i, i, indexing="ij")

    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mu_x = float((i * px).sum())
    mu_y = float((i * py).sum())
    sigma_x = float(np.sqrt(((i - mu_x) ** 2 * px).sum()))
    sigma_y = float(np.sqrt(((i - mu_y) ** 2 * py).sum()))

    # diagonal-band marginals p_{x+y} and p_{x-y}
    sums = np.zeros(2 * n - 1)
    np.add.at(sums, (ii + jj).astype(int), p)
    diffs = np.zeros(n)
    np.add.at(diffs, np.abs(ii - jj).astype(int), p)

    energy = float((p * p).sum())
    contrast = float(((ii - jj) ** 2 * p).sum())
    autocorrelation = float((ii * jj * p).sum())
    if sigma_x > 0 and sigma_y > 0:
        correlation = (autocorrelation - mu_x * mu_y) / (sigma_x * sigma_y)
    else:
        correlation = 0.0
    variance = float(((ii - mu_x) ** 2 * p).sum())
    homogeneity = float((p / (1.0 + (ii - jj) ** 2)).sum())
    dissimilarity = float((np.abs(ii - jj) * p).sum())

    k_sum = np.arange(2 * n - 1, dtype=np.float64)
    sum_average = float((k_sum * sums).sum())
    sum_variance = float(((k_sum - sum_average) ** 2 * sums).sum())
    sum_entropy = _entropy(sums)

    k_diff = np.arange(n, dtype=np.float64)
    diff_average = float((k_diff * diffs).sum())
    difference_variance = float(((k_diff - diff_average) ** 2 * diffs).sum())
    difference_entropy = _entropy(diffs)

    entropy = _entropy(p.ravel())
    hx = _entropy(px)
    hy = _entropy(py)
    marg = np.outer(px, py)
    inside = (p > 0) & (marg > 0)
    hxy1 = float(-(p[inside] * np.log(marg[inside])).sum())
    hxy2 = _entropy(marg.ravel())
    denom = max(hx, hy)
    imc1 = (entropy - hxy1) / denom if denom > 0 else 0.0
    imc2 = float(np.sqrt(max(0.0, 1.0 - np.exp(-2.0 * (hxy2 - entropy)))))

    return HaralickVector(
        energy=energy,
        contrast=contrast,
        correlation=float(correlation),
        variance=variance,
        homogeneity=homogeneity,
        sum_average=sum_average,
        sum_variance=sum_variance,
        sum_entropy=sum_entropy,
        entropy=entropy,
        difference_variance=difference_variance,
        difference_entropy=difference_entropy,
        imc1=float(imc1),
        imc2=imc2,
        max_correlation_coefficient=_max_correlation(p, px, py),
        autocorrelation=autocorrelation,
        dissimilarity=dissimilarity,
    )


def sequence_descriptors(seq, names=DESCRIPTOR_NAMES):
    """Reduce each timestep to concatenated descriptor vectors per matrix.

    Requires the sequence to retain its per-timestep matrices; the result
    keeps the mode and timestep order, with f = len(names) * matrices per
    timestep.  Single-slice direction sequences (one matrix per timestep)
    collapse to one timestep of all direction blocks in angle order, so the
    descriptor width is always len(names) * directions.
    """
    if seq.glcms is None:
        raise EmptyGlcmError("sequence does not retain its matrices")
    steps = seq.glcms
    real = seq.real.copy()
    if seq.mode == MODE_2D:
        steps = [[g for step in seq.glcms for g in step]]
        real = np.ones(1, dtype=bool)

    def block(g):
        # pair-less matrices (e.g. out-of-plane directions in a 1-slice VS)
        # carry no texture; encode them as a zero block
        if g.empty:
            return np.zeros(len(names))
        return haralick(g).as_array(names)

    rows = [np.concatenate([block(g) for g in step]) for step in steps]
    return GlcmSequence(mode=seq.mode, features=np.stack(rows),
                        levels=seq.levels, real=real)
