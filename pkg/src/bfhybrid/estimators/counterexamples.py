"""Models where the MLE or the Bayes estimator is inconsistent.

``FergusonModel`` mixes a triangular density of shrinking width
``delta(alpha)`` centred at ``alpha`` with a uniform density; its
likelihood has spikes at observations near 1 that drag the MLE to 1.
``SchwartzModel`` is uniform on ``[0, 1]`` at ``beta = 1`` and uniform on
``[0, 2/beta]`` for ``1 < beta < 2``; with a flat prior the posterior mean
tends to 2 when ``beta = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, trapezoid
from scipy.optimize import minimize_scalar

from ..model_kit.base import Model, ParamSpace

FERGUSON_UPPER = 1.0 - 1e-6
GRID_STEP = 1e-3
BAYES_GRID = 10_001
REFINE_POINTS = 2001
REGION_DROP = 30.0


class DerivativeFree(Model):
    def deriv(self, x, theta, i):
        raise NotImplementedError(f"{self.name} has no usable likelihood derivatives")


class FergusonModel(DerivativeFree):
    """``f(x|a) = (1-a)/delta(a) f0((x-a)/delta(a)) + a/2`` on ``[-1, 1]``.

    ``f0`` is the triangular density on ``[-1, 1]`` and
    ``delta(a) = (1-a) exp(1 - (1-a)^{-c})``.
    """

    name = "ferguson"

    def __init__(self, c: float = 3.0):
        if not c > 2:
            raise ValueError(f"c must exceed 2, got {c}")
        self.c = float(c)
        super().__init__(ParamSpace(("alpha",), (0.0,), (1.0,), alpha=(0,)))

    @staticmethod
    def _alpha(theta) -> float:
        a = float(np.asarray(theta, dtype=float).reshape(-1)[0])
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {a}")
        return a

    def log_delta(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        with np.errstate(divide="ignore"):
            u = 1.0 - alpha
            return np.where(u > 0, np.log(u) + 1.0 - u ** (-self.c), -np.inf)

    def delta(self, alpha):
        return np.exp(self.log_delta(alpha))

    def support(self, theta):
        return (-1.0, 1.0)

    def logpdf(self, x, theta):
        a = self._alpha(theta)
        x = self.as_obs(x)
        return _ferguson_terms(x, a, float(self.log_delta(a)))

    def sample(self, theta, n, rng):
        a = self._alpha(theta)
        uniform = rng.uniform(size=n) < a
        tri = a + self.delta(a) * rng.triangular(-1.0, 0.0, 1.0, size=n)
        return np.where(uniform, rng.uniform(-1.0, 1.0, size=n), tri)


def _ferguson_terms(x, a, log_delta):
    """Per-observation log-density; the triangular part is evaluated in log space."""
    out = np.full(x.shape, -np.inf)
    inside = np.abs(x) <= 1.0
    with np.errstate(all="ignore"):
        log_unif = np.log(a / 2.0) if a > 0 else -np.inf
        if a >= 1.0:
            out[inside] = log_unif
            return out
        diff = x - a
        scaled = np.where(diff == 0, 0.0, diff * np.exp(-log_delta))
        tri = np.clip(1.0 - np.abs(scaled), 0.0, None)
        log_tri = np.log1p(-a) - log_delta + np.log(tri)
        out[inside] = np.logaddexp(log_tri, log_unif)[inside]
    return out


class _SortedLoglik:
    """Ferguson log-likelihood on many ``alpha`` values using a sorted sample.

    Only observations within ``delta(alpha)`` of ``alpha`` see the
    triangular part, so every other term equals ``log(alpha / 2)``.
    """

    def __init__(self, model: FergusonModel, x):
        self.model = model
        self.x = np.sort(model.as_obs(x))
        if np.any(np.abs(self.x) > 1):
            raise ValueError("Ferguson observations must lie in [-1, 1]")

    def __call__(self, alphas) -> np.ndarray:
        alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
        x, n = self.x, len(self.x)
        ld = self.model.log_delta(alphas)
        width = np.exp(ld)
        lo = np.searchsorted(x, alphas - width, side="left")
        hi = np.searchsorted(x, alphas + width, side="right")
        # exact hits matter even when the width underflows
        hit_lo = np.searchsorted(x, alphas, side="left")
        hit_hi = np.searchsorted(x, alphas, side="right")
        lo = np.minimum(lo, hit_lo)
        hi = np.maximum(hi, hit_hi)
        with np.errstate(divide="ignore"):
            base = n * np.log(alphas / 2.0)
        out = base.copy()
        for k in np.nonzero((hi > lo) | (alphas == 0))[0]:
            a = alphas[k]
            if a == 0:
                out[k] = _ferguson_terms(x, a, ld[k]).sum()
                continue
            seg = x[lo[k] : hi[k]]
            out[k] += np.sum(_ferguson_terms(seg, a, ld[k]) - np.log(a / 2.0))
        return out


def ferguson_mle(sample, c: float = 3.0, step: float = GRID_STEP, upper: float = FERGUSON_UPPER) -> float:
    """Grid maximum over ``[0, upper]`` plus the observations in that range, then golden-section refinement.

    The likelihood spike at an observation near 1 is far narrower than any
    grid, so the observations themselves are candidate maximizers.
    """
    model = FergusonModel(c)
    L = _SortedLoglik(model, sample)
    grid = np.linspace(0.0, upper, int(round(upper / step)) + 1)
    obs = L.x[(L.x >= 0) & (L.x <= upper)]
    cand = np.concatenate([grid, obs])
    vals = L(cand)
    k = int(np.argmax(vals))
    best, best_val = float(cand[k]), float(vals[k])
    half = step if k < len(grid) else float(model.delta(best))
    lo, hi = max(0.0, best - half), min(upper, best + half)
    if hi - lo > 4 * np.finfo(float).eps * max(1.0, best):
        res = minimize_scalar(lambda a: -L([a])[0], bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        if np.isfinite(res.fun) and -res.fun > best_val:
            best = float(res.x)
    return best


def ferguson_posterior_mean(sample, c: float = 3.0, upper: float = FERGUSON_UPPER) -> float:
    """Posterior mean of ``alpha`` under a uniform prior on ``[0, 1]``, by adaptive trapezoid quadrature.

    Nodes are a uniform grid plus midpoints between consecutive
    observations, which locate the narrow plateau where many observations
    share the triangular part. Each run of nodes within ``REGION_DROP``
    log-units of the maximum is re-gridded finely. The isolated spikes at
    single observations have negligible mass and are not resolved.
    """
    model = FergusonModel(c)
    L = _SortedLoglik(model, sample)
    xs = L.x[(L.x >= 0) & (L.x <= upper)]
    mids = (xs[1:] + xs[:-1]) / 2 if len(xs) > 1 else np.empty(0)
    nodes = np.unique(np.concatenate([np.linspace(0.0, upper, BAYES_GRID), mids]))
    vals = L(nodes)
    top = np.max(vals)
    mask = vals >= top - REGION_DROP
    fine = [nodes]
    idx = np.nonzero(mask)[0]
    if len(idx):
        breaks = np.nonzero(np.diff(idx) > 1)[0]
        starts = np.concatenate([[idx[0]], idx[breaks + 1]])
        ends = np.concatenate([idx[breaks], [idx[-1]]])
        for s, e in zip(starts, ends):
            a = nodes[max(s - 1, 0)]
            b = nodes[min(e + 1, len(nodes) - 1)]
            fine.append(np.linspace(a, b, REFINE_POINTS))
    grid = np.unique(np.concatenate(fine))
    lv = L(grid)
    w = np.exp(lv - np.max(lv))
    return float(trapezoid(w * grid, grid) / trapezoid(w, grid))


# -- Schwartz -------------------------------------------------------------------


class SchwartzModel(DerivativeFree):
    """``U[0, 1]`` at ``beta = 1`` and ``U[0, 2/beta]`` for ``1 < beta < 2``."""

    name = "schwartz"

    def __init__(self):
        super().__init__(ParamSpace(("beta",), (1.0,), (2.0,), alpha=(0,)))

    @staticmethod
    def _beta(theta) -> float:
        b = float(np.asarray(theta, dtype=float).reshape(-1)[0])
        if not 1.0 <= b < 2.0:
            raise ValueError(f"beta must lie in [1, 2), got {b}")
        return b

    def logpdf(self, x, theta):
        b = self._beta(theta)
        x = self.as_obs(x)
        top = 1.0 if b == 1.0 else 2.0 / b
        return np.where((x >= 0) & (x <= top), -np.log(top), -np.inf)

    def support(self, theta):
        b = self._beta(theta)
        return (0.0, 1.0 if b == 1.0 else 2.0 / b)

    def sample(self, theta, n, rng):
        return rng.uniform(0.0, self.support(theta)[1], size=n)


def _check_schwartz(sample) -> np.ndarray:
    y = np.asarray(sample, dtype=float).reshape(-1)
    if len(y) == 0:
        raise ValueError("need at least one observation")
    if np.any(y < 0) or np.any(y >= 2):
        raise ValueError("Schwartz observations must lie in [0, 2)")
    return y


def schwartz_mle(sample) -> float:
    """``1`` if the maximum is at most 1, else ``2 / max``."""
    ymax = float(_check_schwartz(sample).max())
    return 1.0 if ymax <= 1.0 else 2.0 / ymax


def schwartz_bayes(sample) -> float:
    """Posterior mean under a flat prior on ``[1, 2)``.

    The posterior is proportional to ``t^n`` on ``[1, b]`` with
    ``b = min(2, 2 / max y)``, so the mean is
    ``(n+1)/(n+2) (b^{n+2} - 1)/(b^{n+1} - 1)``, evaluated in a form that
    neither overflows nor cancels.
    """
    y = _check_schwartz(sample)
    n = len(y)
    ymax = float(y.max())
    lb = np.log(2.0) if ymax <= 1.0 else np.log(2.0 / ymax)
    ratio = np.exp(lb) * np.expm1(-(n + 2) * lb) / np.expm1(-(n + 1) * lb)
    return float((n + 1) / (n + 2) * ratio)


def schwartz_estimators(sample) -> tuple:
    """``(MLE, posterior mean)``."""
    return schwartz_mle(sample), schwartz_bayes(sample)


def schwartz_bayes_quadrature(sample) -> float:
    """The posterior mean by numerical integration, as an independent check."""
    y = _check_schwartz(sample)
    n = len(y)
    b = min(2.0, 2.0 / float(y.max()))
    num = quad(lambda t: t ** (n + 1), 1.0, b, epsabs=0, epsrel=1e-13)[0]
    den = quad(lambda t: t**n, 1.0, b, epsabs=0, epsrel=1e-13)[0]
    return num / den


# -- product model -----------------------------------------------------------------


@dataclass
class ProductModel:
    """Independent Ferguson ``x`` (parameter ``alpha``) and Schwartz ``y`` (parameter ``beta``)."""

    c: float = 3.0

    def sample(self, alpha: float, beta: float, n: int, rng: np.random.Generator):
        x = FergusonModel(self.c).sample([alpha], n, rng)
        y = SchwartzModel().sample([beta], n, rng)
        return x, y

    def estimators(self, x, y) -> dict:
        """MLE, Bayes and both hybrids; the likelihood factorizes so each block is solved alone."""
        a_mle, a_bayes = ferguson_mle(x, self.c), ferguson_posterior_mean(x, self.c)
        b_mle, b_bayes = schwartz_estimators(y)
        return {
            "mle": np.array([a_mle, b_mle]),
            "bayes": np.array([a_bayes, b_bayes]),
            "hybrid": np.array([a_bayes, b_mle]),
            "reverse_hybrid": np.array([a_mle, b_bayes]),
        }
