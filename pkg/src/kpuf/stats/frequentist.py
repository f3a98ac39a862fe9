"""Exact binomial law and chi-square checks used alongside the Bayesian fit."""

from typing import NamedTuple

import numpy as np
from scipy import special, stats

from ..exceptions import DomainError


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def expit(x):
    return special.expit(x)


def binomial_logpmf(k, n, p):
    k = np.asarray(k)
    with np.errstate(divide="ignore"):
        log_comb = special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)
        return log_comb + special.xlogy(k, p) + special.xlog1py(n - k, -p)


def binomial_pmf_oracle(n, p, k):
    """Binomial pmf from log-gamma arithmetic."""
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise DomainError(f"n must be a non-negative integer, got {n!r}")
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p!r}")
    if isinstance(k, bool) or int(k) != k or not 0 <= k <= n:
        raise DomainError(f"k must be an integer in [0, {n}], got {k!r}")
    return float(np.exp(binomial_logpmf(int(k), int(n), float(p))))


class ChiSquareResult(NamedTuple):
    statistic: float
    dof: int
    pvalue: float
    warning: str | None = None


def chi_square_uniformity(table):
    """Pearson chi-square of pooled per-cell counts against equal expected counts.

    ``table`` is a :class:`~kpuf.experiment.VisitTable` or a 1-D array of
    pooled counts.
    """
    pooled = table.pooled() if hasattr(table, "pooled") else np.asarray(table)
    pooled = np.asarray(pooled, dtype=np.float64).ravel()
    if pooled.size < 2:
        raise DomainError("need at least two cells")
    total = pooled.sum()
    if total <= 0:
        raise DomainError("no visits recorded")
    expected = total / pooled.size
    stat = float(((pooled - expected) ** 2).sum() / expected)
    dof = pooled.size - 1
    warning = None
    if expected < 5:
        warning = f"expected count {expected:.3g} < 5 per cell; chi-square approximation unreliable"
    return ChiSquareResult(stat, dof, float(stats.chi2.sf(stat, dof)), warning)


def pool_tail_bins(observed, expected, min_expected=5.0):
    """Merge upper bins into their neighbour until each has ``min_expected`` expected counts."""
    obs = list(np.asarray(observed, dtype=np.float64))
    exp = list(np.asarray(expected, dtype=np.float64))
    while len(exp) > 1 and exp[-1] < min_expected:
        e, o = exp.pop(), obs.pop()
        exp[-1] += e
        obs[-1] += o
    return np.array(obs), np.array(exp)


def binomial_gof(freq, n, p, min_expected=5.0):
    """Chi-square goodness of fit of a visit histogram to Binomial(n, p).

    ``freq[k]`` counts records with ``k`` visits.  The last bin absorbs the
    whole upper tail of the reference law.
    """
    freq = np.asarray(freq, dtype=np.float64)
    total = freq.sum()
    kmax = max(len(freq) - 1, 0)
    pmf = np.exp(binomial_logpmf(np.arange(kmax + 1), n, p))
    pmf[-1] = stats.binom.sf(kmax - 1, n, p)
    obs, exp = pool_tail_bins(freq, total * pmf, min_expected)
    stat = float(((obs - exp) ** 2 / exp).sum())
    dof = len(obs) - 1
    return ChiSquareResult(stat, dof, float(stats.chi2.sf(stat, dof)))


def cell_binomial_tests(table, p0=None):
    """Two-sided exact binomial test per cell on pooled counts.

    ``p0`` defaults to uniform visiting (1 / number of cells).
    """
    pooled = table.pooled()
    trials = table.n_runs * table.n_trials
    p0 = 1.0 / pooled.size if p0 is None else p0
    return np.array([stats.binomtest(int(k), trials, p0).pvalue for k in pooled])
