"""MCMC convergence diagnostics: rank-normalized split R-hat and effective sample size.

All functions take draws shaped ``(chains, draws)`` or ``(chains, draws, k)``
and return a scalar or a length-``k`` array.
"""

import numpy as np
from scipy import stats


def _as_3d(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[:, :, None], True
    if x.ndim != 3:
        raise ValueError("draws must be shaped (chains, draws) or (chains, draws, k)")
    return x, False


def _split(x):
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def _rank_normalize(x):
    c, n, k = x.shape
    flat = x.reshape(c * n, k)
    ranks = stats.rankdata(flat, axis=0, method="average")
    z = stats.norm.ppf((ranks - 0.375) / (c * n + 0.25))
    return z.reshape(c, n, k)


def _rhat_classic(x):
    m, n, _ = x.shape
    chain_mean = x.mean(axis=1)
    chain_var = x.var(axis=1, ddof=1)
    between = n * chain_mean.var(axis=0, ddof=1)
    within = chain_var.mean(axis=0)
    var_plus = (n - 1) / n * within + between / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / within)
    return np.where(within > 0, r, np.nan)


def rhat(draws):
    """Rank-normalized split R-hat, the max of the bulk and folded versions."""
    x, scalar = _as_3d(draws)
    if x.shape[0] * 2 < 4 or x.shape[1] < 4:
        raise ValueError("R-hat needs at least 2 chains with 4 draws each")
    xs = _split(x)
    bulk = _rhat_classic(_rank_normalize(xs))
    med = np.median(xs.reshape(-1, xs.shape[2]), axis=0)
    tail = _rhat_classic(_rank_normalize(np.abs(xs - med)))
    out = np.fmax(bulk, tail)
    return float(out[0]) if scalar else out


def _autocov(x):
    """Per-chain autocovariance along axis 1 via FFT."""
    n = x.shape[1]
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    centred = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(centred, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n]
    return acov / n


def _ess_one(acov, chain_mean, chain_var, n):
    m = acov.shape[0]
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # Geyer's initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1 + 2 * rho[: max_t + 1].sum() + rho[max_t + 1]
    tau = max(tau, 1 / np.log10(total))
    return total / tau


def _ess(x):
    m, n, k = x.shape
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    chain_mean = x.mean(axis=1)
    return np.array([
        _ess_one(acov[:, :, j], chain_mean[:, j], chain_var[:, j], n) for j in range(k)
    ])


def ess(draws, method="bulk"):
    """Effective sample size.

    ``method="bulk"`` works on rank-normalized split chains; ``"mean"`` uses
    the raw split chains and is the one to pair with Monte-Carlo standard errors.
    """
    x, scalar = _as_3d(draws)
    xs = _split(x)
    if method == "bulk":
        xs = _rank_normalize(xs)
    elif method != "mean":
        raise ValueError(f"unknown ESS method {method!r}")
    out = _ess(xs)
    return float(out[0]) if scalar else out


def mcse_mean(draws):
    x = np.asarray(draws, dtype=np.float64)
    return float(x.std(ddof=1) / np.sqrt(ess(x, method="mean")))
