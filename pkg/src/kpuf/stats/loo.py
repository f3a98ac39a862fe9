"""Pointwise predictive accuracy: PSIS leave-one-out, WAIC, and model comparison.

Importance ratios for leaving observation ``i`` out are ``1 / p(y_i | theta_s)``.
Their upper tail is replaced by quantiles of a generalized Pareto fit
(Zhang-Stephens estimate with a weak prior on the shape ``k``); ``k`` above
0.7 means the estimate is unreliable, in which case WAIC is reported instead.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..exceptions import DomainError

logger = logging.getLogger(__name__)

K_THRESHOLD = 0.7
_TINY_LOG = np.log(np.finfo(float).tiny)


def gpd_fit(x):
    """Shape ``k`` and scale ``sigma`` of a generalized Pareto fit to sorted exceedances.

    ``x`` is ``(m,)`` or ``(m, j)`` sorted ascending along axis 0; fits are
    vectorized over the trailing axis.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    m = x.shape[0]
    prior_bs, prior_k = 3.0, 10.0
    n_grid = 30 + int(np.sqrt(m))
    quart = x[int(m / 4 + 0.5) - 1]
    b = 1.0 - np.sqrt(n_grid / (np.arange(1, n_grid + 1) - 0.5))
    b = b[:, None] / (prior_bs * quart[None, :]) + 1.0 / x[-1][None, :]
    # k_grid[g, j] = mean_i log1p(-b[g, j] * x[i, j])
    k_grid = np.log1p(-b[:, None, :] * x[None, :, :]).mean(axis=1)
    len_scale = m * (np.log(-b / k_grid) - k_grid - 1.0)
    with np.errstate(over="ignore"):
        # an overflowing sum just means a negligible grid weight
        weights = 1.0 / np.exp(len_scale[None, :, :] - len_scale[:, None, :]).sum(axis=1)
    weights = np.where(weights >= 10 * np.finfo(float).eps, weights, 0.0)
    weights /= weights.sum(axis=0, keepdims=True)
    b_post = (b * weights).sum(axis=0)
    k = np.log1p(-b_post[None, :] * x).mean(axis=0)
    sigma = -k / b_post
    k = (m * k + prior_k * 0.5) / (m + prior_k)
    if squeeze:
        return float(k[0]), float(sigma[0])
    return k, sigma


def gpd_quantile(probs, k, sigma):
    probs = np.asarray(probs)[:, None]
    k = np.asarray(k)[None, :]
    sigma = np.asarray(sigma)[None, :]
    small = np.abs(k) < np.finfo(float).eps
    safe_k = np.where(small, 1.0, k)
    q = np.where(small, -np.log1p(-probs), np.expm1(-safe_k * np.log1p(-probs)) / safe_k)
    return sigma * q


def psis_smooth(log_ratios, r_eff=1.0):
    """Pareto-smoothed, normalized log weights and the shape ``k`` per column.

    ``log_ratios`` is ``(S, N)``; smoothing acts on each column independently.
    """
    lw = np.array(log_ratios, dtype=np.float64)
    S, N = lw.shape
    lw -= lw.max(axis=0, keepdims=True)
    tail = int(np.ceil(min(0.2 * S, 3 * np.sqrt(S / r_eff))))
    k_hat = np.full(N, np.inf)
    if tail > 4 and S > tail:
        # only the largest tail + 1 values per column need ordering
        # (partitioning contiguous rows of the transpose is several times faster)
        part = np.argpartition(np.ascontiguousarray(lw.T), S - tail - 1, axis=1)[:, S - tail - 1:].T
        vals = np.take_along_axis(lw, part, axis=0)
        within = np.argsort(vals, axis=0)
        order = np.take_along_axis(part, within, axis=0)
        srt = np.take_along_axis(vals, within, axis=0)
        cutoff = np.maximum(srt[0], _TINY_LOG)
        tail_vals = srt[1:]
        # ties at the cutoff shrink the tail; those columns are handled one by one
        clean = np.all(tail_vals > cutoff[None, :], axis=0)
        if clean.any():
            cols = np.flatnonzero(clean)
            exceed = np.exp(tail_vals[:, cols]) - np.exp(cutoff[cols])[None, :]
            k, sigma = gpd_fit(exceed)
            ok = np.isfinite(k)
            probs = (np.arange(tail) + 0.5) / tail
            smoothed = np.log(gpd_quantile(probs, k[ok], sigma[ok]) + np.exp(cutoff[cols[ok]])[None, :])
            smoothed = np.minimum(smoothed, 0.0)
            rows = order[1:, cols[ok]]
            lw[rows, cols[ok][None, :]] = smoothed
            k_hat[cols] = k
        for j in np.flatnonzero(~clean):
            lw[:, j], k_hat[j] = _psis_column(lw[:, j], tail)
    lw -= logsumexp(lw, axis=0, keepdims=True)
    return lw, k_hat


def _psis_column(x, tail):
    x = x.copy()
    cutoff = max(np.sort(x)[-tail - 1], _TINY_LOG)
    idx = np.flatnonzero(x > cutoff)
    if idx.size <= 4:
        return x, np.inf
    idx = idx[np.argsort(x[idx])]
    exceed = np.exp(x[idx]) - np.exp(cutoff)
    k, sigma = gpd_fit(exceed)
    if np.isfinite(k):
        probs = (np.arange(idx.size) + 0.5) / idx.size
        q = gpd_quantile(probs, [k], [sigma])[:, 0]
        x[idx] = np.minimum(np.log(q + np.exp(cutoff)), 0.0)
    return x, k


@dataclass(frozen=True)
class ElpdResult:
    """Expected log pointwise predictive density of one model."""

    method: str
    elpd: float
    se: float
    p_eff: float
    pointwise: np.ndarray
    pareto_k: np.ndarray | None = None

    @property
    def ic(self):
        """Information criterion on the deviance scale, ``-2 * elpd``."""
        return -2.0 * self.elpd

    @property
    def ic_se(self):
        return 2.0 * self.se


def _finish(method, elpd_i, lppd_i, k=None):
    n = elpd_i.size
    return ElpdResult(
        method=method,
        elpd=float(elpd_i.sum()),
        se=float(np.sqrt(n * elpd_i.var())),
        p_eff=float((lppd_i - elpd_i).sum()),
        pointwise=elpd_i,
        pareto_k=k,
    )


def _blocks(source):
    if hasattr(source, "iter_loglik"):
        yield from source.iter_loglik()
    else:
        ll = np.asarray(source, dtype=np.float64)
        yield np.arange(ll.shape[1]), ll


def loo(source):
    """PSIS-LOO from a ``(draws, observations)`` matrix or a :class:`PosteriorFit`."""
    elpd, lppd, ks = [], [], []
    for _, ll in _blocks(source):
        lw, k = psis_smooth(-ll)
        elpd.append(logsumexp(lw + ll, axis=0))
        lppd.append(logsumexp(ll, axis=0) - np.log(ll.shape[0]))
        ks.append(k)
    return _finish("loo", np.concatenate(elpd), np.concatenate(lppd), np.concatenate(ks))


def waic(source):
    elpd, lppd = [], []
    for _, ll in _blocks(source):
        lp = logsumexp(ll, axis=0) - np.log(ll.shape[0])
        lppd.append(lp)
        elpd.append(lp - ll.var(axis=0, ddof=1))
    return _finish("waic", np.concatenate(elpd), np.concatenate(lppd))


def elpd(source):
    """PSIS-LOO, falling back to WAIC when any Pareto ``k`` exceeds 0.7."""
    res = loo(source)
    n_bad = int(np.sum(res.pareto_k > K_THRESHOLD))
    if n_bad:
        logger.warning("%d observations with pareto k > %.1f; using WAIC", n_bad, K_THRESHOLD)
        return waic(source)
    return res


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    method: str
    elpd: float
    se: float
    elpd_diff: float
    se_diff: float

    @property
    def looic(self):
        return -2.0 * self.elpd

    @property
    def looic_se(self):
        return 2.0 * self.se


def compare_models(fits, names=None):
    """Rank fits by elpd; differences are taken against the best model.

    ``fits`` are :class:`PosteriorFit` objects (or precomputed
    :class:`ElpdResult` objects) over the identical observation set.
    """
    fits = list(fits)
    if not fits:
        raise DomainError("nothing to compare")
    if names is None:
        names = [getattr(getattr(f, "spec", None), "variant", f"model{i}") for i, f in enumerate(fits)]
    prints = {f.fingerprint() for f in fits if hasattr(f, "fingerprint")}
    if len(prints) > 1:
        raise DomainError("fits were computed on different observation sets")
    results = [f if isinstance(f, ElpdResult) else elpd(f) for f in fits]
    sizes = {r.pointwise.size for r in results}
    if len(sizes) > 1:
        raise DomainError("fits have different numbers of observations")
    order = sorted(range(len(results)), key=lambda i: -results[i].elpd)
    best = results[order[0]]
    n = best.pointwise.size
    rows = []
    for i in order:
        r = results[i]
        diff = r.pointwise - best.pointwise
        rows.append(ComparisonRow(
            model=names[i],
            method=r.method,
            elpd=r.elpd,
            se=r.se,
            elpd_diff=float(diff.sum()),
            se_diff=float(np.sqrt(n * diff.var())),
        ))
    return rows
