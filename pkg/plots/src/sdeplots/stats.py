"""Paired significance tests for seed-matched experiment results.

The one-sided Wilcoxon signed-rank test carries its own exact null
distribution (subset-sum enumeration over ranks) so small-sample p-values
are exact, not approximations; ties in |d| fall back to average ranks with
the usual caveat that exactness assumes continuous data.  The paired t-test
is standard and delegates its tail probability to scipy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

EXACT_LIMIT = 25  # enumerate the null exactly up to this many nonzero pairs


@dataclass
class TestResult:
    statistic: float
    p_value: float
    n_pairs: int
    method: str


def _signed_ranks(diffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nonzero = diffs[diffs != 0.0]
    order = np.abs(nonzero)
    ranks = sps.rankdata(order)  # average ranks for ties
    return nonzero, ranks


def wilcoxon_null_cdf_counts(n: int) -> np.ndarray:
    """counts[s] = number of sign assignments with positive-rank sum s, for
    untied ranks 1..n (the exact null of the signed-rank statistic)."""
    max_sum = n * (n + 1) // 2
    counts = np.zeros(max_sum + 1, dtype=object)
    counts[0] = 1
    for r in range(1, n + 1):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r > 0 else counts
        counts = counts + shifted
    return counts


def wilcoxon_one_sided(x: np.ndarray, y: np.ndarray) -> TestResult:
    """P(condition < reference) via the paired signed-rank statistic.

    Tests H1: the differences x - y are stochastically negative.  The
    statistic is the positive-rank sum W+; small W+ is evidence for H1, and
    the exact p-value is P(W+ <= w) under the symmetric null.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("paired samples must have equal length")
    diffs, ranks = _signed_ranks(x - y)
    n = len(diffs)
    if n == 0:
        return TestResult(float("nan"), 1.0, 0, "wilcoxon-degenerate")
    w_plus = float(ranks[diffs > 0].sum())
    if n <= EXACT_LIMIT and float(ranks.sum()) == n * (n + 1) / 2 and not _has_ties(ranks):
        counts = wilcoxon_null_cdf_counts(n)
        w_floor = int(np.floor(w_plus + 1e-12))
        p = float(sum(counts[: w_floor + 1]) / (2**n))
        return TestResult(w_plus, p, n, "wilcoxon-exact")
    # normal approximation with continuity correction for large n or ties
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    tie_groups = np.unique(ranks, return_counts=True)[1]
    var -= (tie_groups**3 - tie_groups).sum() / 48.0
    z = (w_plus - mean + 0.5) / np.sqrt(var)
    return TestResult(w_plus, float(sps.norm.cdf(z)), n, "wilcoxon-normal")


def _has_ties(ranks: np.ndarray) -> bool:
    return len(np.unique(ranks)) != len(ranks)


def paired_t_one_sided(x: np.ndarray, y: np.ndarray) -> TestResult:
    """P(condition < reference) via the paired t statistic."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("paired samples must have equal length")
    d = x - y
    n = len(d)
    if n < 2 or np.allclose(d.std(ddof=1), 0.0):
        return TestResult(float("nan"), 1.0, n, "t-degenerate")
    t = d.mean() / (d.std(ddof=1) / np.sqrt(n))
    return TestResult(float(t), float(sps.t.cdf(t, df=n - 1)), n, "paired-t")


def significance_stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
