"""Point estimators: MLE, Bayes rules and the hybrid, plus the mixture EM and counterexample models."""

from .bayes import (
    bayes_estimate,
    bayes_rule_from_draws,
    declared_decoupling,
    hybrid_estimate,
    mle_estimate,
    moment_init,
    mvn_hybrid_closed_form,
    posterior_mode,
    vech,
)
from .core import EstimateResult, HybridResult, LossSpec, McmcConfig, OptimizerConfig, newton_maximize
from .counterexamples import (
    FergusonModel,
    ProductModel,
    SchwartzModel,
    ferguson_mle,
    ferguson_posterior_mean,
    schwartz_bayes,
    schwartz_bayes_quadrature,
    schwartz_estimators,
    schwartz_mle,
)
from .mcmc import McmcResult, effective_sample_size, rwm
from .mixture_em import (
    canonical_order,
    mixture_bayes,
    mixture_log_posterior,
    mixture_hybrid_em,
    mixture_mle_em,
    mixture_prior,
    penalized_objective,
    quantile_init,
)
from .priors import (
    Exponential,
    Flat,
    Gamma,
    InvGamma,
    MvNormal,
    Normal,
    PriorSpec,
    PriorTerm,
    PseudoObservation,
    StickUniform,
    Uniform,
    Wishart,
)
