"""MLE, Bayes and hybrid point estimators for differentiable models."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from ..model_kit.base import Model, hessian_matrix, score_vector
from .core import EstimateResult, HybridResult, LossSpec, NewtonResult, OptimizerConfig, newton_maximize
from .mcmc import rwm
from .priors import PriorSpec

OSCILLATION_LIMIT = 2
PERTURB = 0.1


def moment_init(model: Model, sample) -> np.ndarray:
    """Moment-based starting point for the bundled models."""
    x = model.as_obs(sample)
    name = model.name
    if name.startswith("mixture"):
        from .mixture_em import quantile_init

        g, a, v = quantile_init(x, model.k)
        return model.pack(g, a, v)
    if name == "gauss1" or name == "poisson":
        return np.array([x.mean()])
    if name == "gauss2":
        return np.array([x.mean(), x.var()])
    if name.startswith("exprate"):
        return 1.0 / np.atleast_1d(x.mean(axis=0))
    if name == "bvnormal":
        c = np.cov(x.T, bias=True)
        return np.array([*x.mean(axis=0), c[0, 0], c[1, 1], c[0, 1] / np.sqrt(c[0, 0] * c[1, 1])])
    if name.startswith("mvn"):
        x = x.reshape(len(x), -1)
        p = x.shape[1]
        c = np.cov(x.T, bias=True).reshape(p, p)
        return np.concatenate([x.mean(axis=0), [c[i, j] for i in range(p) for j in range(i + 1)]])
    raise ValueError(f"no moment starting point for model {name!r}; pass init")


class _Objective:
    """``log f(x | theta) + log pi(theta)`` restricted to a block of coordinates."""

    def __init__(self, model: Model, sample, prior: PriorSpec | None, theta, coords):
        self.model = model
        self.x = model.as_obs(sample)
        self.prior = prior
        self.theta = np.asarray(theta, dtype=float).copy()
        self.coords = list(coords)

    def full(self, sub):
        th = self.theta.copy()
        th[self.coords] = sub
        return th

    def value_full(self, th) -> float:
        if not self.model.space.contains(th):
            return -np.inf
        lp = 0.0 if self.prior is None else self.prior.logpdf(th)
        if not np.isfinite(lp):
            return -np.inf
        with np.errstate(all="ignore"):
            v = self.model.loglik(self.x, th) + lp
        return float(v) if np.isfinite(v) else -np.inf

    def value(self, sub) -> float:
        return self.value_full(self.full(sub))

    def grad_full(self, th) -> np.ndarray:
        g = score_vector(self.model, self.x, th)
        if self.prior is not None:
            g = g + self.prior.grad(th)
        return g

    def grad(self, sub):
        return self.grad_full(self.full(sub))[self.coords]

    def hess_full(self, th) -> np.ndarray:
        H = hessian_matrix(self.model, self.x, th)
        if self.prior is not None:
            H = H + self.prior.hess(th)
        return H

    def hess(self, sub):
        return self.hess_full(self.full(sub))[np.ix_(self.coords, self.coords)]

    def maximize(self, tol, max_iter) -> NewtonResult:
        sp = self.model.space
        lo = np.asarray(sp.lower, dtype=float)[self.coords]
        hi = np.asarray(sp.upper, dtype=float)[self.coords]
        return newton_maximize(self.value, self.grad, self.hess, self.theta[self.coords], lo, hi, tol, max_iter)


def _perturb(model: Model, theta, rng) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    new = th + PERTURB * (1.0 + np.abs(th)) * rng.standard_normal(len(th))
    return model.space.project(new, margin=1e-6)


def _maximize_with_restarts(model, sample, prior, init, config: OptimizerConfig, coords=None):
    d = model.space.d
    coords = list(range(d)) if coords is None else list(coords)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    start = np.asarray(init, dtype=float)
    best, tried = None, 0
    for attempt in range(config.restarts + 1):
        obj = _Objective(model, sample, prior, start, coords)
        try:
            res = obj.maximize(config.tol, config.max_iter)
        except ValueError:
            res = None
        tried = attempt + 1
        if res is not None and (best is None or res.value > best[0].value):
            best = (res, obj.full(res.x))
        if res is not None and res.converged:
            break
        start = _perturb(model, init, rng)
    if best is None:
        raise RuntimeError("objective is not finite at any starting point")
    res, theta = best
    diag = {"grad_norm": res.grad_norm, "restarts_used": tried - 1, "fallback_steps": res.fallback_steps}
    return EstimateResult(theta, res.value, res.iterations, res.converged, diag)


def mle_estimate(model: Model, sample, init=None, config: OptimizerConfig | None = None) -> EstimateResult:
    """Maximum likelihood by Newton-Raphson with restarts from perturbed starts."""
    config = config or OptimizerConfig()
    init = moment_init(model, sample) if init is None else model.space.check(init)
    return _maximize_with_restarts(model, sample, None, init, config)


def posterior_mode(model: Model, sample, prior: PriorSpec, init=None, config=None, coords=None) -> EstimateResult:
    config = config or OptimizerConfig()
    init = moment_init(model, sample) if init is None else np.asarray(init, dtype=float)
    return _maximize_with_restarts(model, sample, prior, init, config, coords)


def bayes_rule_from_draws(draws: np.ndarray, loss: LossSpec) -> np.ndarray:
    """Minimize the posterior expected separable loss over draws, coordinate by coordinate."""
    draws = np.atleast_2d(draws)
    d = draws.shape[1]
    if loss.kind == "squared":
        return draws.mean(axis=0)
    if loss.kind == "zero_one":
        raise ValueError("the zero-one rule is a posterior mode, not a draw summary")
    out = np.empty(d)
    for k, a in enumerate(loss.exponents_for(d)):
        col = draws[:, k]
        if a == 2:
            out[k] = col.mean()
            continue
        res = minimize_scalar(lambda t: np.mean((col - t) ** a), bounds=(col.min(), col.max()), method="bounded",
                              options={"xatol": 1e-12 * (1 + np.abs(col).max())})
        out[k] = res.x
    return out


def _laplace_cov(obj: _Objective, sub) -> np.ndarray | None:
    try:
        H = obj.hess(sub)
        C = np.linalg.inv(-H)
        np.linalg.cholesky(C)
        return C
    except np.linalg.LinAlgError:
        return None


def _posterior_draws(model, sample, prior, theta, coords, config: OptimizerConfig, seed_key):
    """MCMC over ``coords`` with the other coordinates fixed at ``theta``."""
    obj = _Objective(model, sample, prior, theta, coords)
    start = np.asarray(theta, dtype=float)[list(coords)]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, *seed_key]))
    return rwm(obj.value, start, config.mcmc, rng, _laplace_cov(obj, start))


def bayes_estimate(
    model: Model,
    sample,
    prior: PriorSpec,
    loss: LossSpec,
    config: OptimizerConfig | None = None,
    init=None,
) -> EstimateResult:
    """Bayes rule under ``loss``: posterior mode for ``zero_one``, else an MCMC summary.

    The chain starts at the posterior mode with the Laplace covariance as
    proposal shape; if the mode search fails the chain starts at ``init``.
    """
    config = config or OptimizerConfig()
    mode = posterior_mode(model, sample, prior, init, config)
    if loss.kind == "zero_one":
        return mode
    start = mode.theta if mode.converged or init is None else np.asarray(init, dtype=float)
    chain = _posterior_draws(model, sample, prior, start, range(model.space.d), config, (1,))
    theta = bayes_rule_from_draws(chain.samples, loss)
    diag = {**chain.diagnostics(), "mode": mode.theta.tolist(), "mode_converged": mode.converged}
    obj = _Objective(model, sample, prior, theta, range(model.space.d))
    return EstimateResult(theta, obj.value_full(theta), mode.iterations, True, diag)


# -- hybrid ---------------------------------------------------------------------


def declared_decoupling(model: Model, alpha: Sequence[int], prior: PriorSpec) -> Callable | None:
    """Closed-form ``arg sup_beta`` when it does not depend on the ``alpha`` value.

    For normal models whose Bayes block is the (co)variance and whose prior
    involves only that block, the maximizing mean is the sample mean for
    every value of the covariance.
    """
    alpha = tuple(sorted(alpha))
    if not prior.coords <= set(alpha):
        return None
    name = model.name
    if name == "gauss2" and alpha == (1,):
        return lambda x: np.atleast_1d(np.mean(x))
    if name.startswith("mvn"):
        p = model.obs_dim
        if alpha == tuple(range(p, model.space.d)):
            return lambda x: np.atleast_1d(np.asarray(x).mean(axis=0))
    return None


def _alpha_step(model, sample, prior, theta, alpha, loss, config, key):
    if loss.kind == "zero_one":
        obj = _Objective(model, sample, prior, theta, alpha)
        res = obj.maximize(config.tol, config.max_iter)
        return obj.full(res.x), {"alpha_grad_norm": res.grad_norm, "alpha_converged": res.converged}
    chain = _posterior_draws(model, sample, prior, theta, alpha, config, key)
    th = np.asarray(theta, dtype=float).copy()
    th[list(alpha)] = bayes_rule_from_draws(chain.samples, loss)
    return th, chain.diagnostics()


def _beta_step(model, sample, prior, theta, beta, config):
    obj = _Objective(model, sample, prior, theta, beta)
    res = obj.maximize(config.tol, config.max_iter)
    return obj.full(res.x), res


def hybrid_estimate(
    model: Model,
    sample,
    prior_alpha: PriorSpec,
    loss_alpha: LossSpec,
    alpha: Sequence[int] | None = None,
    init=None,
    config: OptimizerConfig | None = None,
    decouple: bool = True,
) -> HybridResult:
    """Bayes rule on ``alpha`` given ``beta``, and ``beta`` maximizing the criterion given ``alpha``.

    Block coordinate ascent alternates the two steps until the iterate stops
    moving. The ``beta`` criterion is ``log f(x | d, beta) + log pi(d | beta)``,
    which reduces to the likelihood when the prior does not involve ``beta``.
    With a zero-one loss the fixed point is polished by a joint Newton solve.
    When :func:`declared_decoupling` supplies a closed form for ``beta``,
    the problem is solved in one pass.
    """
    config = config or OptimizerConfig()
    d = model.space.d
    alpha = tuple(model.space.alpha if alpha is None else alpha)
    beta = tuple(k for k in range(d) if k not in alpha)
    if not alpha or not beta:
        raise ValueError("hybrid estimation needs non-empty alpha and beta blocks")
    if prior_alpha.d != d:
        raise ValueError(f"prior must be defined on all {d} coordinates (flat where unused)")
    x = model.as_obs(sample)
    init = moment_init(model, x) if init is None else model.space.check(init)
    objective = _Objective(model, x, prior_alpha, init, range(d))

    shortcut = declared_decoupling(model, alpha, prior_alpha) if decouple else None
    if shortcut is not None:
        th = np.asarray(init, dtype=float).copy()
        th[list(beta)] = shortcut(x)
        th, diag = _alpha_step(model, x, prior_alpha, th, alpha, loss_alpha, config, (0, 0))
        resid = float(np.linalg.norm(objective.grad_full(th)[list(beta)]))
        diag.update({"decoupled": True, "beta_grad_norm": resid, "restarts_used": 0})
        return _hybrid_result(th, alpha, beta, objective.value_full(th), 1, resid < _stationarity_tol(config, x), diag)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    start = np.asarray(init, dtype=float)
    history = []
    for restart in range(config.restarts + 1):
        out = _block_ascent(model, x, prior_alpha, loss_alpha, alpha, beta, start, config, restart, objective)
        history.append(out)
        if out.converged:
            break
        start = _perturb(model, init, rng)
    best = next((h for h in history if h.converged), max(history, key=lambda h: h.objective))
    best.diagnostics["restarts_used"] = len(history) - 1
    return best


def _stationarity_tol(config, x):
    return max(config.tol, 1e3 * np.finfo(float).eps * len(x))


def _hybrid_result(theta, alpha, beta, value, iterations, converged, diag):
    theta = np.asarray(theta, dtype=float)
    return HybridResult(theta[list(alpha)], theta[list(beta)], float(value), iterations, bool(converged), diag, alpha, theta)


def _block_ascent(model, x, prior, loss, alpha, beta, start, config, restart, objective):
    th = np.asarray(start, dtype=float).copy()
    prev = -np.inf
    decreases = 0
    diag = {"decoupled": False}
    moved = np.inf
    mc_noise = 0.0
    for it in range(1, config.max_iter + 1):
        old = th.copy()
        th, adiag = _alpha_step(model, x, prior, th, alpha, loss, config, (restart, it))
        th, bres = _beta_step(model, x, prior, th, beta, config)
        val = objective.value_full(th)
        if loss.kind == "zero_one":
            if val < prev - 1e-12 * max(1.0, abs(prev)):
                decreases += 1
                if decreases >= OSCILLATION_LIMIT:
                    diag.update({"oscillation": True, "beta_grad_norm": bres.grad_norm})
                    return _hybrid_result(th, alpha, beta, val, it, False, diag)
        else:
            mc_noise = 4.0 * max(adiag["mcse"])
        prev = val
        moved = float(np.max(np.abs(th - old)))
        scale = 1.0 + float(np.max(np.abs(th)))
        if moved <= max(np.sqrt(config.tol) * scale, mc_noise):
            break
    diag.update(adiag)
    diag["last_move"] = moved
    stol = _stationarity_tol(config, x)
    if loss.kind == "zero_one":
        polish = _Objective(model, x, prior, th, range(model.space.d)).maximize(config.tol, config.max_iter)
        th = polish.x
        g = objective.grad_full(th)
        diag.update({"grad_norm": float(np.linalg.norm(g)), "beta_grad_norm": float(np.linalg.norm(g[list(beta)]))})
        converged = polish.converged or diag["grad_norm"] < stol
    else:
        g = objective.grad_full(th)[list(beta)]
        diag["beta_grad_norm"] = float(np.linalg.norm(g))
        converged = moved <= max(np.sqrt(config.tol) * (1.0 + np.max(np.abs(th))), mc_noise) and diag["beta_grad_norm"] < max(stol, 1e-6)
    return _hybrid_result(th, alpha, beta, objective.value_full(th), it, converged, diag)


# -- multivariate normal closed form --------------------------------------------


def mvn_hybrid_closed_form(sample, mu1) -> tuple:
    """Hybrid estimate for ``N_p(mu, Omega)`` with prior ``N(mu1, Omega)`` on ``mu``.

    Returns ``(mu, Omega)`` with ``mu = (n xbar + mu1) / (n + 1)`` and
    ``Omega = [sum (x_i - mu)(x_i - mu)' + (mu1 - mu)(mu1 - mu)'] / (n + 1)``.
    """
    x = np.asarray(sample, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    mu1 = np.asarray(mu1, dtype=float).reshape(-1)
    mu = (x.sum(axis=0) + mu1) / (n + 1)
    z = x - mu
    w = mu1 - mu
    return mu, (z.T @ z + np.outer(w, w)) / (n + 1)


def vech(M) -> np.ndarray:
    M = np.atleast_2d(M)
    p = M.shape[0]
    return np.array([M[i, j] for i in range(p) for j in range(i + 1)])

