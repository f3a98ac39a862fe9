"""Binomial mixed-effects model of cell visits, sampled by Metropolis-within-Gibbs.

The model for visit count ``y[r, c]`` of cell ``c`` in run ``r`` is::

    y[r, c] ~ Binomial(n, P[r, c])
    logit(P[r, c]) = a + eta_c[c] + eta_r[r]
    eta_c ~ Normal(0, sigma_c),  eta_r ~ Normal(0, sigma_r)
    a ~ Normal(0, 5),  sigma_c, sigma_r ~ HalfNormal(1)

Random effects are sampled non-centred (``eta = sigma * z``).  Each sweep
updates all ``z_c`` in parallel (they are conditionally independent), then
all ``z_r``, then ``a``, then each log-scale in both the non-centred and the
centred parameterization.  The centred scale move leaves the likelihood
untouched, so it is cheap, and interleaving it with the non-centred move keeps
the scales mixing whether the data are weak or strong.  Proposal scales
adapt by Robbins-Monro during warmup only.
"""

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_count_matrix
from ..exceptions import ConvergenceError, DegenerateDataError, DomainError
from .diagnostics import ess, rhat

logger = logging.getLogger(__name__)

VARIANTS = ("both", "cell", "none")
VARIANT_LABELS = {
    "both": "two random effects",
    "cell": "one random effect",
    "none": "no random effect",
}
SCALAR_PARAMS = ("a_bar", "sigma_c", "sigma_r")
TARGET_ACCEPT = 0.44
SCALE_MOVES = 3
INTERCEPT_MOVES = 2


def _softplus(x):
    """log(1 + exp(x)) to ~1e-16 absolute error; faster than logaddexp."""
    with np.errstate(over="ignore"):
        out = np.log(1.0 + np.exp(x))
    if np.isinf(out).any():
        out = np.where(np.isinf(out), x, out)
    return out


def _expit(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class ModelSpec:
    """Which effects are present, the trials per run and the prior scales.

    ``intercept_prior="jeffreys"`` puts a Beta(1/2, 1/2) prior on the
    probability scale instead of the normal prior on ``a``.
    """

    variant: str = "both"
    n: int = 480
    intercept_scale: float = 5.0
    effect_scale: float = 1.0
    intercept_prior: str = "normal"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        if self.intercept_scale <= 0 or self.effect_scale <= 0:
            raise DomainError("prior scales must be positive")
        if self.intercept_prior not in ("normal", "jeffreys"):
            raise DomainError(f"unknown intercept prior {self.intercept_prior!r}")

    @property
    def has_cell(self):
        return self.variant in ("both", "cell")

    @property
    def has_run(self):
        return self.variant == "both"


@dataclass(frozen=True)
class MCMCSettings:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000

    def __post_init__(self):
        if self.chains < 2:
            raise DomainError("at least 2 chains are required for convergence diagnostics")
        if self.warmup < 0 or self.draws < 4:
            raise DomainError("need warmup >= 0 and draws >= 4")


class _Adapter:
    """Robbins-Monro adaptation of log proposal scales toward a target acceptance."""

    def __init__(self, init, shape=(), cap=None):
        self.log_step = np.full(shape, np.log(init))
        self.log_cap = np.inf if cap is None else np.log(cap)

    @property
    def step(self):
        return np.exp(self.log_step)

    def update(self, log_ratio, t):
        accept_prob = np.exp(np.minimum(log_ratio, 0.0))
        gamma = (t + 10.0) ** -0.6
        self.log_step = np.minimum(
            self.log_step + gamma * (accept_prob - TARGET_ACCEPT), self.log_cap
        )


def _autoregressive(z, step, rng):
    """Random-walk proposal that leaves the N(0, 1) prior invariant.

    ``step`` in (0, 1] is the innovation weight; at 1 the proposal is an
    independent prior draw, so only the likelihood ratio enters acceptance.
    """
    beta = np.minimum(step, 1.0)
    return np.sqrt(1.0 - beta**2) * z + beta * rng.standard_normal(z.shape)


def _normal_logpdf(x, mean, prec):
    return 0.5 * np.log(prec) - 0.5 * prec * (x - mean) ** 2


class _ScaleMove:
    """Joint update of one effect family's log-scale and its effects.

    A random-walk proposal for the log-scale is paired with fresh effects
    drawn from ``N(0, sigma')`` times a second-order expansion of each
    effect's likelihood.  The expansion point is a per-effect empirical log
    rate ratio with the family's effects removed.  That offset (``base``) is
    untouched by the move, so the forward and reverse proposal densities use
    the same expansion and the acceptance ratio is exact.  It also means the
    expansion can be reused for several moves in one sweep.
    """

    NEWTON_STEPS = 8

    def __init__(self, y_k, base, axis, n):
        self.y_k, self.base, self.axis, self.n = y_k, base, axis, n
        mu = n * _expit(base).sum(axis=axis)
        self.centre = np.log((y_k + 0.5) / (mu + 0.5))
        p = _expit(base + self.bcast(self.centre))
        # expected count and curvature at the centre; the likelihood away from
        # it is modelled as y*e - g*(exp(kappa*(e - centre)) - 1)/kappa
        self.expected = n * p.sum(axis=axis)
        self.hess = n * (p * (1.0 - p)).sum(axis=axis)
        self.kappa = self.hess / self.expected

    def bcast(self, v):
        return v[None, :] if self.axis == 0 else v[:, None]

    def conditional(self, sigma):
        """Laplace approximation of each effect given ``sigma``: mean and precision."""
        prior_prec = sigma**-2.0
        # quadratic solution as the Newton start, then exact steps on the tilted model
        e = (self.hess * self.centre + self.y_k - self.expected) / (self.hess + prior_prec)
        for _ in range(self.NEWTON_STEPS):
            tilt = np.exp(np.minimum(self.kappa * (e - self.centre), 50.0))
            grad = self.y_k - self.expected * tilt - prior_prec * e
            curv = self.hess * tilt + prior_prec
            e = e + np.clip(grad / curv, -1.0, 1.0)
        tilt = np.exp(np.minimum(self.kappa * (e - self.centre), 50.0))
        return e, self.hess * tilt + prior_prec

    def propose(self, s, s_p, effect, sp, spec, rng):
        """Return ``(log_accept_ratio, effect', eta', softplus(eta'))``."""
        sigma, sigma_p = np.exp(s), np.exp(s_p)
        mean_p, prec_p = self.conditional(sigma_p)
        effect_p = mean_p + rng.standard_normal(effect.shape) / np.sqrt(prec_p)
        mean, prec = self.conditional(sigma)

        eta_p = self.base + self.bcast(effect_p)
        sp_p = _softplus(eta_p)
        lr = float(self.y_k @ (effect_p - effect)) - self.n * float(np.sum(sp_p - sp))
        lr += float(np.sum(_normal_logpdf(effect_p, 0.0, sigma_p**-2.0)))
        lr -= float(np.sum(_normal_logpdf(effect, 0.0, sigma**-2.0)))
        lr += _scale_logprior(s_p, spec) - _scale_logprior(s, spec)
        lr += float(np.sum(_normal_logpdf(effect, mean, prec)))
        lr -= float(np.sum(_normal_logpdf(effect_p, mean_p, prec_p)))
        return lr, effect_p, eta_p, sp_p


def _intercept_logprior(a, spec):
    if spec.intercept_prior == "jeffreys":
        # Beta(1/2, 1/2) on expit(a) times the logit Jacobian
        return -0.5 * (np.logaddexp(0.0, a) + np.logaddexp(0.0, -a))
    return -0.5 * (a / spec.intercept_scale) ** 2


def _scale_logprior(log_sigma, spec):
    """Half-normal prior on sigma, expressed on log sigma (Jacobian included)."""
    return -0.5 * (np.exp(log_sigma) / spec.effect_scale) ** 2 + log_sigma


def run_chain(y, spec, warmup, draws, rng):
    """Run one chain; return a dict of kept draws and acceptance rates."""
    n_runs, n_cells = y.shape
    n = spec.n
    y = y.astype(np.float64)
    y_total, y_col, y_row = y.sum(), y.sum(axis=0), y.sum(axis=1)
    has_c, has_r = spec.has_cell, spec.has_run

    rate = (y_total + 0.5) / (y.size * n + 1.0)
    a = float(np.log(rate) - np.log1p(-rate) + rng.normal(0, 0.3))
    s_c = np.log(0.1 * spec.effect_scale) + rng.normal(0, 0.5) if has_c else -np.inf
    s_r = np.log(0.1 * spec.effect_scale) + rng.normal(0, 0.5) if has_r else -np.inf
    z_c = rng.standard_normal(n_cells) if has_c else np.zeros(n_cells)
    z_r = rng.standard_normal(n_runs) if has_r else np.zeros(n_runs)

    def linear():
        return a + np.exp(s_c) * z_c[None, :] + np.exp(s_r) * z_r[:, None]

    eta = linear()
    sp = _softplus(eta)

    ad_a = _Adapter(0.05)
    ad_zc, ad_zr = _Adapter(0.5, n_cells, cap=1.0), _Adapter(0.5, n_runs, cap=1.0)
    ad_sc, ad_sr = _Adapter(0.3), _Adapter(0.3)
    ad_sc_cen, ad_sr_cen = _Adapter(0.3), _Adapter(0.3)

    keep = {"a_bar": np.empty(draws)}
    if has_c:
        keep["sigma_c"] = np.empty(draws)
        keep["eta_c"] = np.empty((draws, n_cells))
    if has_r:
        keep["sigma_r"] = np.empty(draws)
        keep["eta_r"] = np.empty((draws, n_runs))
    accepted = {k: 0.0 for k in ("a_bar", "z_c", "z_r", "sigma_c", "sigma_r")}

    for t in range(warmup + draws):
        adapting = t < warmup

        if has_c:
            sigma = np.exp(s_c)
            prop = _autoregressive(z_c, ad_zc.step, rng)
            d = sigma * (prop - z_c)
            eta_p = eta + d[None, :]
            sp_p = _softplus(eta_p)
            lr = y_col * d - n * (sp_p - sp).sum(axis=0)
            acc = np.log(rng.random(n_cells)) < lr
            z_c = np.where(acc, prop, z_c)
            eta = np.where(acc[None, :], eta_p, eta)
            sp = np.where(acc[None, :], sp_p, sp)
            if adapting:
                ad_zc.update(lr, t)
            else:
                accepted["z_c"] += acc.mean()

        if has_r:
            sigma = np.exp(s_r)
            prop = _autoregressive(z_r, ad_zr.step, rng)
            d = sigma * (prop - z_r)
            eta_p = eta + d[:, None]
            sp_p = _softplus(eta_p)
            lr = y_row * d - n * (sp_p - sp).sum(axis=1)
            acc = np.log(rng.random(n_runs)) < lr
            z_r = np.where(acc, prop, z_r)
            eta = np.where(acc[:, None], eta_p, eta)
            sp = np.where(acc[:, None], sp_p, sp)
            if adapting:
                ad_zr.update(lr, t)
            else:
                accepted["z_r"] += acc.mean()

        for _ in range(INTERCEPT_MOVES):
            d = float(ad_a.step * rng.standard_normal())
            sp_p = _softplus(eta + d)
            lr = y_total * d - n * float(np.sum(sp_p - sp))
            lr += _intercept_logprior(a + d, spec) - _intercept_logprior(a, spec)
            if np.log(rng.random()) < lr:
                a += d
                eta = eta + d
                sp = sp_p
                accepted["a_bar"] += (not adapting) / INTERCEPT_MOVES
            if adapting:
                ad_a.update(lr, t)

        for name, has, size, adapt, adapt_cen in (
            ("sigma_c", has_c, n_cells, ad_sc, ad_sc_cen),
            ("sigma_r", has_r, n_runs, ad_sr, ad_sr_cen),
        ):
            if not has:
                continue
            s = s_c if name == "sigma_c" else s_r
            z = z_c if name == "sigma_c" else z_r

            # joint moves: new scale, effects redrawn from a Gaussian conditional
            y_k = y_col if name == "sigma_c" else y_row
            axis = 0 if name == "sigma_c" else 1
            effect = np.exp(s) * z
            move = _ScaleMove(y_k, eta - (effect[None, :] if axis == 0 else effect[:, None]), axis, n)
            for _ in range(SCALE_MOVES):
                s_p = s + float(adapt.step * rng.standard_normal())
                lr, effect_p, eta_p, sp_p = move.propose(s, s_p, effect, sp, spec, rng)
                if np.log(rng.random()) < lr:
                    s, effect, eta, sp = s_p, effect_p, eta_p, sp_p
                    accepted[name] += (not adapting) / (SCALE_MOVES + 1)
                if adapting:
                    adapt.update(lr, t)
            z = effect / np.exp(s)

            # centred: eta fixed, z rescales
            effect = np.exp(s) * z
            s_p = s + float(adapt_cen.step * rng.standard_normal())
            ss = float(np.sum(effect**2))
            lr = (
                -0.5 * ss * (np.exp(-2 * s_p) - np.exp(-2 * s))
                - size * (s_p - s)
                + _scale_logprior(s_p, spec)
                - _scale_logprior(s, spec)
            )
            if np.log(rng.random()) < lr:
                z = effect / np.exp(s_p)
                s = s_p
                accepted[name] += (not adapting) / (SCALE_MOVES + 1)
            if adapting:
                adapt_cen.update(lr, t)

            if name == "sigma_c":
                s_c, z_c = s, z
            else:
                s_r, z_r = s, z

        if t % 200 == 0:
            # refresh the cached grid against accumulated rounding
            eta = linear()
            sp = _softplus(eta)

        if not adapting:
            i = t - warmup
            keep["a_bar"][i] = a
            if has_c:
                keep["sigma_c"][i] = np.exp(s_c)
                keep["eta_c"][i] = np.exp(s_c) * z_c
            if has_r:
                keep["sigma_r"][i] = np.exp(s_r)
                keep["eta_r"][i] = np.exp(s_r) * z_r

    rates = {k: v / draws for k, v in accepted.items()}
    return keep, rates


def _n_workers(chains):
    env = os.environ.get("KPUF_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(chains, cap))


@dataclass(eq=False)
class PosteriorFit:
    """Posterior draws of one model variant plus diagnostics.

    ``draws`` maps parameter name to an array shaped ``(chains, draws)`` or
    ``(chains, draws, k)``.  Observations are the (run, cell) pairs in
    run-major order.
    """

    spec: ModelSpec
    y: np.ndarray
    draws: dict
    rhat: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    acceptance: list = field(default_factory=list)

    @property
    def n_chains(self):
        return self.draws["a_bar"].shape[0]

    @property
    def n_draws(self):
        return self.draws["a_bar"].shape[1]

    @property
    def n_obs(self):
        return self.y.size

    def flat(self, name):
        """Draws of ``name`` with chains stacked: ``(S,)`` or ``(S, k)``."""
        x = self.draws[name]
        return x.reshape((-1,) + x.shape[2:])

    def fingerprint(self):
        return (self.y.shape, self.spec.n, hashlib.sha256(np.ascontiguousarray(self.y).tobytes()).hexdigest())

    def pointwise_loglik(self, obs=None):
        """Log-likelihood matrix ``(draws, observations)`` for the selected observations."""
        n_runs, n_cells = self.y.shape
        obs = np.arange(self.n_obs) if obs is None else np.asarray(obs)
        r, c = np.divmod(obs, n_cells)
        yk = self.y.ravel()[obs].astype(np.float64)
        eta = np.repeat(self.flat("a_bar")[:, None], obs.size, axis=1)
        if self.spec.has_cell:
            eta = eta + self.flat("eta_c")[:, c]
        if self.spec.has_run:
            eta = eta + self.flat("eta_r")[:, r]
        n = self.spec.n
        log_comb = special.gammaln(n + 1) - special.gammaln(yk + 1) - special.gammaln(n - yk + 1)
        return log_comb + yk * eta - n * np.logaddexp(0.0, eta)

    def iter_loglik(self, chunk=1024):
        """Yield ``(obs_indices, loglik_block)`` covering every observation once."""
        for start in range(0, self.n_obs, chunk):
            obs = np.arange(start, min(start + chunk, self.n_obs))
            yield obs, self.pointwise_loglik(obs)

    def summary(self):
        """Rows ``(param, median, lo95, hi95, lo80, hi80, rhat, ess)``."""
        rows = []
        for name in ("a_bar", "sigma_c", "sigma_r", "eta_c", "eta_r"):
            if name not in self.draws:
                continue
            flat = self.flat(name)
            if flat.ndim == 1:
                flat = flat[:, None]
                labels = [name]
            else:
                base = 0 if name == "eta_c" else 1
                labels = [f"{name}[{j + base}]" for j in range(flat.shape[1])]
            q = np.quantile(flat, [0.5, 0.025, 0.975, 0.10, 0.90], axis=0)
            rh = np.atleast_1d(self.rhat[name])
            es = np.atleast_1d(self.ess[name])
            for j, label in enumerate(labels):
                rows.append((label, *q[:, j], rh[j], es[j]))
        return rows


def _check_gate(fit, rhat_max, ess_min):
    bad = {}
    for name in SCALAR_PARAMS:
        if name not in fit.rhat:
            continue
        r, e = fit.rhat[name], fit.ess[name]
        if not (r < rhat_max and e > ess_min):
            bad[name] = (r, e)
    if bad:
        detail = ", ".join(f"{k}: rhat={r:.4f} ess={e:.0f}" for k, (r, e) in bad.items())
        raise ConvergenceError(f"fit did not converge ({detail})", bad)


def fit_glmm(table, spec=None, mcmc=None, seed=None, check_convergence=True,
             rhat_max=1.01, ess_min=400):
    """Sample the posterior of ``spec`` given a visit table or count matrix."""
    counts = table.counts if hasattr(table, "counts") else table
    y = check_count_matrix(counts)
    if spec is None:
        n_trials = getattr(table, "n_trials", None)
        if n_trials is None:
            raise DomainError("spec (or a VisitTable) is needed to know trials per run")
        spec = ModelSpec(n=n_trials)
    mcmc = mcmc or MCMCSettings()
    if not y.any():
        raise DegenerateDataError("all counts are zero; the intercept is unidentified")
    if y.max() > spec.n:
        raise DomainError(f"a count exceeds n={spec.n}")

    children = np.random.SeedSequence(seed).spawn(mcmc.chains)
    rngs = [np.random.default_rng(s) for s in children]
    with ThreadPoolExecutor(_n_workers(mcmc.chains)) as pool:
        results = list(pool.map(
            lambda rng: run_chain(y, spec, mcmc.warmup, mcmc.draws, rng), rngs
        ))
    draws = {k: np.stack([res[0][k] for res in results]) for k in results[0][0]}
    fit = PosteriorFit(spec, y, draws, acceptance=[res[1] for res in results])
    for name, x in draws.items():
        fit.rhat[name] = rhat(x)
        fit.ess[name] = ess(x)
    logger.info(
        "fit %s: %s", spec.variant,
        ", ".join(f"{k} rhat={fit.rhat[k]:.4f} ess={fit.ess[k]:.0f}" for k in SCALAR_PARAMS if k in draws),
    )
    if check_convergence:
        _check_gate(fit, rhat_max, ess_min)
    return fit


@dataclass(frozen=True)
class CellEffectScreen:
    level: float
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def flagged(self):
        """True where the interval excludes zero."""
        return (self.lower > 0) | (self.upper < 0)

    @property
    def overlaps_zero(self):
        return ~self.flagged


def screen_cell_effects(fit, level=0.95):
    """Central credible intervals of every cell effect and whether they exclude zero."""
    if level not in (0.80, 0.95):
        raise DomainError(f"level must be 0.80 or 0.95, got {level!r}")
    if not fit.spec.has_cell:
        raise DomainError("model has no cell effects to screen")
    eta = fit.flat("eta_c")
    tail = (1 - level) / 2
    lo, med, hi = np.quantile(eta, [tail, 0.5, 1 - tail], axis=0)
    return CellEffectScreen(level, med, lo, hi)


class BinomialGLMM(BaseEstimator):
    """Estimator wrapper around :func:`fit_glmm`.

    ``fit`` takes a :class:`~kpuf.experiment.VisitTable` or a runs x cells
    count matrix.  ``n_trials=None`` reads the trials per run from the table,
    or from constant row sums of a matrix.
    """

    def __init__(self, variant="both", n_trials=None, chains=4, warmup=1000, draws=1000,
                 intercept_scale=5.0, effect_scale=1.0, intercept_prior="normal",
                 check_convergence=True, random_state=None):
        self.variant = variant
        self.n_trials = n_trials
        self.chains = chains
        self.warmup = warmup
        self.draws = draws
        self.intercept_scale = intercept_scale
        self.effect_scale = effect_scale
        self.intercept_prior = intercept_prior
        self.check_convergence = check_convergence
        self.random_state = random_state

    def _trials(self, X, y):
        if self.n_trials is not None:
            return self.n_trials
        if hasattr(X, "n_trials"):
            return X.n_trials
        totals = y.sum(axis=1)
        if np.all(totals == totals[0]) and totals[0] > 0:
            return int(totals[0])
        raise DomainError("n_trials must be given when run totals differ")

    def fit(self, X, y=None):
        counts = check_count_matrix(X.counts if hasattr(X, "counts") else X)
        spec = ModelSpec(
            variant=self.variant,
            n=self._trials(X, counts),
            intercept_scale=self.intercept_scale,
            effect_scale=self.effect_scale,
            intercept_prior=self.intercept_prior,
        )
        mcmc = MCMCSettings(self.chains, self.warmup, self.draws)
        self.posterior_ = fit_glmm(
            counts, spec, mcmc, seed=self.random_state, check_convergence=self.check_convergence
        )
        self.n_runs_, self.n_cells_ = counts.shape
        self.intercept_ = float(np.median(self.posterior_.flat("a_bar")))
        if spec.has_cell:
            self.cell_effects_ = np.median(self.posterior_.flat("eta_c"), axis=0)
        if spec.has_run:
            self.run_effects_ = np.median(self.posterior_.flat("eta_r"), axis=0)
        return self

    def predict_proba(self, X=None):
        """Posterior mean visit probability for every (run, cell)."""
        check_is_fitted(self, "posterior_")
        post = self.posterior_
        if X is not None:
            shape = check_count_matrix(X.counts if hasattr(X, "counts") else X).shape
            if shape != (self.n_runs_, self.n_cells_):
                raise DomainError(f"expected shape {(self.n_runs_, self.n_cells_)}, got {shape}")
        eta = post.flat("a_bar")[:, None, None]
        if post.spec.has_cell:
            eta = eta + post.flat("eta_c")[:, None, :]
        if post.spec.has_run:
            eta = eta + post.flat("eta_r")[:, :, None]
        eta = np.broadcast_to(eta, (eta.shape[0], self.n_runs_, self.n_cells_))
        return special.expit(eta).mean(axis=0)

    def score(self, X=None, y=None):
        """Log pointwise predictive density per observation on the training data."""
        check_is_fitted(self, "posterior_")
        total = 0.0
        for _, ll in self.posterior_.iter_loglik():
            total += float(np.sum(special.logsumexp(ll, axis=0) - np.log(ll.shape[0])))
        return total / self.posterior_.n_obs

    def screen(self, level=0.95):
        check_is_fitted(self, "posterior_")
        return screen_cell_effects(self.posterior_, level)
