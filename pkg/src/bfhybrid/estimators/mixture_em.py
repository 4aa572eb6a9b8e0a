"""EM for univariate Gaussian mixtures with normal priors on the component means.

With priors on the means and maximization over weights and variances this
is the hybrid estimator of the mixture under a zero-one loss on the means;
without priors it is the MLE.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ..model_kit.bundled import GaussianMixture, mixture
from .bayes import bayes_rule_from_draws
from .core import EstimateResult, HybridResult, LossSpec, OptimizerConfig
from .mcmc import rwm
from .priors import Normal, PriorSpec, StickUniform, Uniform

VAR_FLOOR = 1e-8
EM_MAX_ITER = 5000
RANDOM_STARTS = 3
LOG2PI = np.log(2 * np.pi)


def quantile_init(x, k: int):
    """Weights ``1/k``, means at the sample quantiles ``(j + 1/2)/k`` and variances ``var(x)/k``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    means = np.quantile(x, (np.arange(k) + 0.5) / k)
    return np.full(k, 1.0 / k), means, np.full(k, max(x.var() / k, 10 * VAR_FLOOR))


def _random_init(x, k, rng):
    means = np.sort(rng.choice(x, size=k, replace=False))
    return np.full(k, 1.0 / k), means, np.full(k, max(x.var() / k, 10 * VAR_FLOOR))


def _log_prior(means, priors):
    if priors is None:
        return 0.0
    return float(sum(-0.5 * np.log(2 * np.pi * t2) - (a - a0) ** 2 / (2 * t2) for a, (a0, t2) in zip(means, priors)))


def penalized_objective(x, g, a, v, priors) -> float:
    """``sum_i log sum_j g_j phi(x_i | a_j, v_j) + sum_j log pi_j(a_j)``."""
    lc = -0.5 * (LOG2PI + np.log(v)) - (x[:, None] - a) ** 2 / (2 * v)
    with np.errstate(divide="ignore"):
        return float(logsumexp(lc + np.log(g), axis=1).sum()) + _log_prior(a, priors)


def _em_run(x, g, a, v, priors, tol, max_iter, fixed_var):
    n = len(x)
    trace = [penalized_objective(x, g, a, v, priors)]
    violations = 0
    for it in range(1, max_iter + 1):
        lc = -0.5 * (LOG2PI + np.log(v)) - (x[:, None] - a) ** 2 / (2 * v) + np.log(g)
        r = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
        w = r.sum(axis=0)
        if np.any(w < 1.0):
            return g, a, v, trace, violations, it, "weight"
        g = w / n
        sx = r.T @ x
        if priors is None:
            a = sx / w
        else:
            a0 = np.array([p[0] for p in priors])
            t2 = np.array([p[1] for p in priors])
            a = (sx / v + a0 / t2) / (w / v + 1.0 / t2)
        if fixed_var is None:
            v = np.einsum("ij,ij->j", r, (x[:, None] - a) ** 2) / w
            if np.any(v < VAR_FLOOR):
                return g, a, v, trace, violations, it, "variance"
        obj = penalized_objective(x, g, a, v, priors)
        if obj < trace[-1] - 1e-10 * (1.0 + abs(trace[-1])):
            violations += 1
        trace.append(obj)
        if obj - trace[-2] < tol:
            return g, a, v, trace, violations, it, None
    return g, a, v, trace, violations, max_iter, "max_iter"


def canonical_order(g, a, v):
    order = np.argsort(a, kind="stable")
    return g[order], a[order], v[order]


def mixture_hybrid_em(
    sample,
    k: int,
    mean_priors: Sequence[tuple] | None = None,
    init=None,
    config: OptimizerConfig | None = None,
    max_iter: int = EM_MAX_ITER,
    fixed_variances=None,
    random_starts: int = RANDOM_STARTS,
) -> HybridResult:
    """Penalized EM over weights, means and variances.

    Parameters
    ----------
    mean_priors : list of (mean, variance), optional
        Normal prior for each component mean; ``None`` gives the MLE.
    init : tuple of (weights, means, variances), optional
        Starting point; defaults to :func:`quantile_init`. ``random_starts``
        further starts at random sample points are also tried and the best
        non-degenerate run is kept.
    fixed_variances : array, optional
        Hold the component variances at these values.

    Each M-step maximizes the expected complete-data objective in the
    weights, then the means, then the variances, so the penalized objective
    never decreases. A run whose component weight falls below one
    observation or whose variance falls below ``VAR_FLOOR`` is discarded.
    """
    config = config or OptimizerConfig()
    x = np.asarray(sample, dtype=float).reshape(-1)
    if k < 1 or len(x) < k:
        raise ValueError(f"need k >= 1 and at least k observations, got k={k}, n={len(x)}")
    if mean_priors is not None:
        mean_priors = [(float(m), float(t)) for m, t in mean_priors]
        if len(mean_priors) != k or any(t <= 0 for _, t in mean_priors):
            raise ValueError(f"need {k} mean priors with positive variances")
    fixed = None if fixed_variances is None else np.broadcast_to(np.asarray(fixed_variances, dtype=float), (k,)).copy()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    starts = [quantile_init(x, k) if init is None else tuple(np.asarray(p, dtype=float) for p in init)]
    starts += [_random_init(x, k, rng) for _ in range(random_starts)]
    runs = []
    for g, a, v in starts:
        if fixed is not None:
            v = fixed
        runs.append(_em_run(x, g.copy(), a.copy(), v.copy(), mean_priors, config.tol, max_iter, fixed))
    good = [r for r in runs if r[6] in (None, "max_iter")]
    pool = good or runs
    best = max(pool, key=lambda r: r[3][-1])
    g, a, v, trace, violations, iters, status = best
    g, a, v = canonical_order(g, a, v)
    diag = {
        "weights": g.tolist(),
        "trace": trace,
        "monotone_violations": violations,
        "restarts_used": len(runs) - 1,
        "degenerate_runs": sum(r[6] in ("weight", "variance") for r in runs),
        "status": status,
        "flagged": not good,
    }
    theta = GaussianMixture.pack(g, a, v)
    beta = np.concatenate([g[:-1], v])
    return HybridResult(a, beta, trace[-1], iters, status is None, diag, tuple(range(k - 1, 2 * k - 1)), theta)


def mixture_mle_em(sample, k: int, init=None, config=None, **kwargs) -> HybridResult:
    return mixture_hybrid_em(sample, k, None, init, config, **kwargs)


def mixture_prior(k: int, mean_priors, gamma_top: float = 2 / 3, var_high: float = 3.0) -> PriorSpec:
    """Stick-uniform weights, normal means and uniform variances on ``(0, var_high)``."""
    model = mixture(k)
    prior = PriorSpec(model.space.d)
    if k > 1:
        prior.add(tuple(range(k - 1)), StickUniform(gamma_top, dim=k - 1))
    for j, (m, t) in enumerate(mean_priors):
        prior.add(k - 1 + j, Normal(m, t))
        prior.add(2 * k - 1 + j, Uniform(0.0, var_high))
    return prior


def mixture_log_posterior(sample, k: int, mean_priors, gamma_top: float = 2 / 3, var_high: float = 3.0):
    """Vectorized log posterior of :func:`mixture_prior` in model coordinates."""
    x = np.asarray(sample, dtype=float).reshape(-1, 1)
    a0 = np.array([m for m, _ in mean_priors])
    t2 = np.array([t for _, t in mean_priors])
    const = -0.5 * np.sum(np.log(2 * np.pi * t2)) - k * np.log(var_high) - np.log(gamma_top)

    def logpost(theta):
        g = theta[: k - 1]
        a = theta[k - 1 : 2 * k - 1]
        v = theta[2 * k - 1 :]
        if np.any(v <= 0) or np.any(v > var_high) or np.any(g < 0):
            return -np.inf
        rest = 1.0 - np.concatenate([[0.0], np.cumsum(g)])
        if k > 1 and (g[0] > gamma_top or np.any(rest[1:] < 0) or np.any(g > rest[:-1])):
            return -np.inf
        gam = np.append(g, rest[-1])
        with np.errstate(divide="ignore"):
            lc = np.log(gam) - 0.5 * np.log(2 * np.pi * v) - (x - a) ** 2 / (2 * v)
        m = lc.max(axis=1, keepdims=True)
        ll = float(np.sum(m) + np.sum(np.log(np.exp(lc - m).sum(axis=1))))
        lp = const - np.sum(np.log(rest[1:-1])) - np.sum((a - a0) ** 2 / (2 * t2))
        out = ll + lp
        return out if np.isfinite(out) else -np.inf

    return logpost


def _fd_hessian(f, x):
    d = len(x)
    H = np.empty((d, d))
    h = 1e-4 * (1.0 + np.abs(x))
    f0 = f(x)
    for i in range(d):
        for j in range(i, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i], ej[j] = h[i], h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
    return H if np.isfinite(f0) else np.full((d, d), np.nan)


def mixture_bayes(
    sample,
    k: int,
    mean_priors,
    config: OptimizerConfig | None = None,
    init=None,
    gamma_top: float = 2 / 3,
    var_high: float = 3.0,
) -> EstimateResult:
    """Posterior mean by random-walk Metropolis, reported in canonical order.

    The chain starts from the hybrid EM estimate, which is the posterior
    mode up to the weight prior, with the inverse negative Hessian there
    as proposal shape.
    """
    config = config or OptimizerConfig()
    model = mixture(k)
    logpost = mixture_log_posterior(sample, k, mean_priors, gamma_top, var_high)
    if init is None:
        init = mixture_hybrid_em(sample, k, mean_priors, config=config).theta
    start = _inside_support(model, np.asarray(init, dtype=float), gamma_top, var_high)
    if not np.isfinite(logpost(start)):
        raise ValueError("starting point has zero prior density")
    cov = None
    H = _fd_hessian(logpost, start)
    if np.all(np.isfinite(H)):
        try:
            cov = np.linalg.inv(-H)
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            cov = None
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
    chain = rwm(logpost, start, config.mcmc, rng, cov)
    theta = bayes_rule_from_draws(chain.samples, LossSpec.squared())
    g, a, v = canonical_order(*model.unpack(theta))
    diag = {**chain.diagnostics(), "weights": g.tolist(), "start": start.tolist()}
    return EstimateResult(model.pack(g, a, v), float(logpost(theta)), config.mcmc.length, True, diag)


def _inside_support(model, theta, gamma_top, var_high, margin=1e-3):
    g, a, v = model.unpack(theta)
    v = np.clip(v, margin, var_high * (1 - margin))
    if model.k > 1 and g[0] > gamma_top:
        order = np.argsort(g[:-1])
        g = g.copy()
        g[: model.k - 1] = g[: model.k - 1][order]
    g = np.clip(g, margin, None)
    g = g / g.sum()
    if model.k > 1:
        g[0] = min(g[0], gamma_top * (1 - margin))
        g = np.append(g[:-1], 1.0 - g[:-1].sum())
    return model.pack(g, a, v)
