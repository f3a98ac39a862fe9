from .diagnostics import ess, mcse_mean, rhat
from .frequentist import (
    binomial_gof,
    binomial_pmf_oracle,
    cell_binomial_tests,
    chi_square_uniformity,
    expit,
    logit,
)
from .glmm import (
    BinomialGLMM,
    CellEffectScreen,
    MCMCSettings,
    ModelSpec,
    PosteriorFit,
    fit_glmm,
    screen_cell_effects,
)
from .loo import ComparisonRow, ElpdResult, compare_models, elpd, loo, waic
