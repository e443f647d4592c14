"""Two-sample statistics and log-log slope fits for experiment reports.

Energy distance is the workhorse: parameter-free, exact at small scale,
and sensitive to any distributional difference.  The U-statistic variant
(self-pairs excluded) is the default because it is unbiased and is what
the permutation test resamples; note that unbiasedness means it can dip
slightly below zero for samples from equal distributions.  The V-statistic
variant (self-pairs included) is nonnegative and exactly zero on identical
sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import ConfigurationError, DomainError, ShapeError

VARIANTS = ("u", "v")

# Above this pooled size the permutation test stops materializing the
# pooled distance matrix ((n+m)^2 doubles) and recomputes distances per
# permutation instead.
_POOLED_MATRIX_LIMIT = 4096

DEFAULT_QUANTILES = (0.5, 0.9, 0.95, 0.99)


@dataclass(frozen=True)
class TwoSampleResult:
    """Observed statistic plus permutation-null quantiles."""

    statistic: float
    null_quantiles: Dict[float, float]
    n_perm: int


def _check_samples(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(
            f"samples must be 2-d (n, dim) matrices, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ShapeError("each sample needs at least 2 points")
    return a, b


def _within_mean(sample, variant):
    n = sample.shape[0]
    total = 2.0 * float(np.sum(pdist(sample)))
    if variant == "u":
        return total / (n * (n - 1))
    return total / (n * n)


def energy_distance(a, b, variant="u"):
    """Energy distance ``2 E|A-B| - E|A-A'| - E|B-B'|`` between samples.

    ``variant="u"`` excludes self-pairs in the within terms (unbiased,
    may be slightly negative for equal distributions); ``variant="v"``
    includes them (nonnegative, exactly zero when ``a`` and ``b`` are
    identical sets).  Exactly symmetric in its arguments: the pair is
    ordered canonically before any summation.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    a, b = _check_samples(a, b)
    if a.tobytes() > b.tobytes():
        a, b = b, a
    between = float(np.mean(cdist(a, b)))
    return 2.0 * between - _within_mean(a, variant) - _within_mean(b, variant)


def _energy_from_pooled(dist, idx_a, idx_b, total_sum, variant):
    """Energy distance of a label split of a pooled distance matrix.

    ``total_sum`` is the full matrix sum, so only the two within-group
    blocks need gathering per permutation.
    """
    n, m = idx_a.shape[0], idx_b.shape[0]
    sum_a = float(np.sum(dist[np.ix_(idx_a, idx_a)]))
    sum_b = float(np.sum(dist[np.ix_(idx_b, idx_b)]))
    between = (total_sum - sum_a - sum_b) / (2.0 * n * m)
    if variant == "u":
        wa = sum_a / (n * (n - 1))
        wb = sum_b / (m * (m - 1))
    else:
        wa = sum_a / (n * n)
        wb = sum_b / (m * m)
    return 2.0 * between - wa - wb


def permutation_test(a, b, n_perm=1000, seed=0, variant="u",
                     quantiles=DEFAULT_QUANTILES):
    """Permutation null of the energy distance under label shuffling.

    Deterministic per seed.  For pooled sizes up to 4096 the pooled
    pairwise-distance matrix is computed once and label splits reuse it;
    beyond that, each permutation recomputes the statistic directly.
    """
    if n_perm < 100:
        raise ConfigurationError(f"n_perm must be >= 100, got {n_perm}")
    if variant not in VARIANTS:
        raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    a, b = _check_samples(a, b)
    n, m = a.shape[0], b.shape[0]
    statistic = energy_distance(a, b, variant=variant)
    pooled = np.concatenate([a, b], axis=0)
    rng = np.random.default_rng(seed)
    null = np.empty(n_perm)
    if n + m <= _POOLED_MATRIX_LIMIT:
        dist = squareform(pdist(pooled))
        total_sum = float(np.sum(dist))
        for i in range(n_perm):
            perm = rng.permutation(n + m)
            null[i] = _energy_from_pooled(
                dist, perm[:n], perm[n:], total_sum, variant
            )
    else:
        for i in range(n_perm):
            perm = rng.permutation(n + m)
            null[i] = energy_distance(
                pooled[perm[:n]], pooled[perm[n:]], variant=variant
            )
    qs = {float(q): float(np.quantile(null, q)) for q in quantiles}
    return TwoSampleResult(statistic=statistic, null_quantiles=qs, n_perm=n_perm)


def loglog_slope(xs, ys):
    """Least-squares slope of ``log ys`` against ``log xs``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or ys.ndim != 1 or xs.shape != ys.shape:
        raise ShapeError(f"xs and ys must be equal-length vectors, got "
                         f"{xs.shape} and {ys.shape}")
    if xs.shape[0] < 3:
        raise ShapeError(f"need at least 3 points for a slope, got {xs.shape[0]}")
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise DomainError("loglog_slope requires strictly positive entries")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
