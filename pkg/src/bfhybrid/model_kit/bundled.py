"""Bundled parametric families with exact derivative and expectation oracles."""

from __future__ import annotations

from functools import lru_cache
from math import comb, factorial

import numpy as np
import sympy as sp
from scipy.special import logsumexp

from ..gauss_moments import gaussian_moment
from ..index_algebra import MultiIndex, multi_indices
from .base import Model, ParamSpace
from .symbolic import SymbolicModel

LOG2PI = np.log(2 * np.pi)


def _gauss_moment_fn(cov_fn):
    def moment(theta, powers):
        if sum(powers) % 2:
            return 0.0
        return gaussian_moment(powers, cov_fn(theta))

    return moment


def gauss1(sigma0: float = 1.0) -> SymbolicModel:
    """Gaussian location family ``N(mu, sigma0^2)`` with known variance."""
    mu, x = sp.symbols("mu x", real=True)
    v0 = sp.nsimplify(sigma0) ** 2
    expr = -sp.log(2 * sp.pi * v0) / 2 - (x - mu) ** 2 / (2 * v0)
    return SymbolicModel(
        "gauss1",
        ParamSpace(("mu",), alpha=(0,)),
        (mu,),
        (x,),
        expr,
        lambda th, n, rng: rng.normal(th[0], sigma0, size=n),
        center=(mu,),
        moment=_gauss_moment_fn(lambda th: np.array([[sigma0**2]])),
    )


def gauss2() -> SymbolicModel:
    """``N(mu, v)`` with ``theta = (mu, v)``."""
    mu, v = sp.symbols("mu v", real=True)
    x = sp.Symbol("x", real=True)
    expr = -sp.log(2 * sp.pi * v) / 2 - (x - mu) ** 2 / (2 * v)
    return SymbolicModel(
        "gauss2",
        ParamSpace(("mu", "sigma2"), (-np.inf, 0.0), (np.inf, np.inf), alpha=(0,)),
        (mu, v),
        (x,),
        expr,
        lambda th, n, rng: rng.normal(th[0], np.sqrt(th[1]), size=n),
        center=(mu,),
        moment=_gauss_moment_fn(lambda th: np.array([[th[1]]])),
    )


def exprate() -> SymbolicModel:
    """Exponential distribution with rate ``theta``."""
    t, x = sp.symbols("theta x", positive=True)
    return SymbolicModel(
        "exprate",
        ParamSpace(("theta",), (0.0,), (np.inf,), alpha=(0,)),
        (t,),
        (x,),
        sp.log(t) - t * x,
        lambda th, n, rng: rng.exponential(1 / th[0], size=n),
        moment=lambda th, p: factorial(p[0]) / th[0] ** p[0],
        support=lambda th: (0.0, np.inf),
    )


def exprates(d: int = 2) -> SymbolicModel:
    """Independent exponential rates, one per observation coordinate."""
    ts = sp.symbols(f"theta1:{d + 1}", positive=True)
    xs = sp.symbols(f"x1:{d + 1}", positive=True)
    expr = sum(sp.log(t) - t * x for t, x in zip(ts, xs))

    def moment(th, p):
        return float(np.prod([factorial(k) / th[j] ** k for j, k in enumerate(p)]))

    return SymbolicModel(
        f"exprates{d}",
        ParamSpace(tuple(str(t) for t in ts), (0.0,) * d, (np.inf,) * d, alpha=tuple(range(d))),
        ts,
        xs,
        expr,
        lambda th, n, rng: rng.exponential(1 / th, size=(n, d)),
        moment=moment,
        support=lambda th: [(0.0, np.inf)] * d,
    )


def _poisson_raw_moment(lam: float, k: int) -> float:
    # Touchard polynomial: E X^k = sum_j S(k, j) lam^j
    return float(sum(sp.functions.combinatorial.numbers.stirling(k, j) * lam**j for j in range(k + 1)))


def poisson() -> SymbolicModel:
    """Poisson distribution with mean ``lam``."""
    lam = sp.Symbol("lam", positive=True)
    x = sp.Symbol("x", nonnegative=True)
    return SymbolicModel(
        "poisson",
        ParamSpace(("lam",), (0.0,), (np.inf,), alpha=(0,)),
        (lam,),
        (x,),
        x * sp.log(lam) - lam - sp.loggamma(x + 1),
        lambda th, n, rng: rng.poisson(th[0], size=n).astype(float),
        moment=lambda th, p: _poisson_raw_moment(th[0], p[0]),
        discrete_support=lambda th: np.arange(0.0, np.ceil(th[0] + 40 * np.sqrt(th[0]) + 40)),
    )


def bvnormal() -> SymbolicModel:
    """Bivariate normal with ``theta = (mu1, mu2, sigma1^2, sigma2^2, rho)``.

    The default alpha block is the covariance part ``(sigma1^2, sigma2^2, rho)``.
    """
    m1, m2, v1, v2, r = sp.symbols("mu1 mu2 v1 v2 rho", real=True)
    x1, x2 = sp.symbols("x1 x2", real=True)
    z1, z2 = x1 - m1, x2 - m2
    q = (z1**2 / v1 - 2 * r * z1 * z2 / sp.sqrt(v1 * v2) + z2**2 / v2) / (1 - r**2)
    expr = -sp.log(2 * sp.pi) - sp.log(v1 * v2 * (1 - r**2)) / 2 - q / 2

    def cov(th):
        c = th[4] * np.sqrt(th[2] * th[3])
        return np.array([[th[2], c], [c, th[3]]])

    def sampler(th, n, rng):
        return rng.multivariate_normal(th[:2], cov(th), size=n)

    def support(th):
        s1, s2 = np.sqrt(th[2]), np.sqrt(th[3])
        return [(th[0] - 12 * s1, th[0] + 12 * s1), (th[1] - 12 * s2, th[1] + 12 * s2)]

    return SymbolicModel(
        "bvnormal",
        ParamSpace(
            ("mu1", "mu2", "sigma1_2", "sigma2_2", "rho"),
            (-np.inf, -np.inf, 0.0, 0.0, -1.0),
            (np.inf, np.inf, np.inf, np.inf, 1.0),
            alpha=(2, 3, 4),
        ),
        (m1, m2, v1, v2, r),
        (x1, x2),
        expr,
        sampler,
        center=(m1, m2),
        moment=_gauss_moment_fn(cov),
        support=support,
    )


def mvn(p: int = 2) -> SymbolicModel:
    """``N_p(mu, Omega)`` with ``theta = (mu, vech(Omega))`` (lower triangle, row-major)."""
    mus = sp.symbols(f"mu1:{p + 1}", real=True)
    pairs = [(i, j) for i in range(p) for j in range(i + 1)]
    oms = sp.symbols(" ".join(f"om{i + 1}{j + 1}" for i, j in pairs), real=True)
    if p == 1:
        oms = (oms,)
    xs = sp.symbols(f"x1:{p + 1}", real=True)
    Om = sp.zeros(p, p)
    for (i, j), o in zip(pairs, oms):
        Om[i, j] = Om[j, i] = o
    z = sp.Matrix([x - m for x, m in zip(xs, mus)])
    expr = -p * sp.log(2 * sp.pi) / 2 - sp.log(Om.det()) / 2 - (z.T * Om.inv() * z)[0, 0] / 2

    def cov(th):
        C = np.zeros((p, p))
        for (i, j), val in zip(pairs, th[p:]):
            C[i, j] = C[j, i] = val
        return C

    names = tuple(str(m) for m in mus) + tuple(str(o) for o in oms)
    lower = (-np.inf,) * p + tuple(0.0 if i == j else -np.inf for i, j in pairs)
    return SymbolicModel(
        f"mvn{p}",
        ParamSpace(names, lower, (np.inf,) * len(names), alpha=tuple(range(p))),
        mus + tuple(oms),
        xs,
        expr,
        lambda th, n, rng: rng.multivariate_normal(th[:p], cov(th), size=n),
        center=mus,
        moment=_gauss_moment_fn(cov),
    )


@lru_cache(maxsize=None)
def _normal_density_derivs(max_order: int = 4):
    """Lambdified ``d^{p+q} phi(x; m, v) / dm^p dv^q`` divided by ``phi``."""
    x, m, v = sp.symbols("x m v", real=True)
    phi = sp.exp(-((x - m) ** 2) / (2 * v)) / sp.sqrt(2 * sp.pi * v)
    out = {}
    for p in range(max_order + 1):
        for q in range(max_order + 1 - p):
            ratio = sp.simplify(sp.diff(phi, m, p, v, q) / phi) if p + q else sp.Integer(1)
            out[(p, q)] = sp.lambdify((x, m, v), ratio, "numpy")
    return out


class GaussianMixture(Model):
    """``k``-component univariate Gaussian mixture.

    ``theta = (gamma_1, ..., gamma_{k-1}, alpha_1, ..., alpha_k, s2_1, ..., s2_k)``
    with ``gamma_k = 1 - sum gamma_j``. The alpha block is the component means.
    Log-density derivatives come from density derivatives through the
    multivariate Leibniz rule ``f_{i+e_k} = sum_{j<=i} C(i,j) f_j l_{i-j+e_k}``.
    """

    def __init__(self, k: int = 3):
        self.k = k
        names = (
            tuple(f"gamma{j + 1}" for j in range(k - 1))
            + tuple(f"alpha{j + 1}" for j in range(k))
            + tuple(f"sigma2_{j + 1}" for j in range(k))
        )
        lower = (0.0,) * (k - 1) + (-np.inf,) * k + (0.0,) * k
        upper = (1.0,) * (k - 1) + (np.inf,) * k + (np.inf,) * k
        super().__init__(ParamSpace(names, lower, upper, alpha=tuple(range(k - 1, 2 * k - 1))))
        self.name = f"mixture{k}"

    def unpack(self, theta):
        k = self.k
        theta = np.asarray(theta, dtype=float)
        g = np.append(theta[: k - 1], 1.0 - theta[: k - 1].sum())
        return g, theta[k - 1 : 2 * k - 1], theta[2 * k - 1 :]

    @staticmethod
    def pack(gamma, means, variances):
        return np.concatenate([np.asarray(gamma)[:-1], means, variances])

    def _comp_logpdf(self, x, theta):
        g, a, v = self.unpack(theta)
        x = self.as_obs(x)[:, None]
        return -0.5 * (LOG2PI + np.log(v)) - (x - a) ** 2 / (2 * v), g

    def logpdf(self, x, theta):
        lc, g = self._comp_logpdf(x, theta)
        with np.errstate(divide="ignore"):
            return logsumexp(lc + np.log(g), axis=1)

    def sample(self, theta, n, rng):
        g, a, v = self.unpack(theta)
        z = rng.choice(self.k, size=n, p=g)
        return rng.normal(a[z], np.sqrt(v[z]))

    def _density_ratio(self, x, theta, i, phi_ratio):
        """``f_i / f`` where ``phi_ratio[:, j] = phi_j / f``."""
        k = self.k
        g, a, v = self.unpack(theta)
        gam = i[: k - 1]
        gsum = sum(gam)
        comps = [j for j in range(k) if i[k - 1 + j] or i[2 * k - 1 + j]]
        if len(comps) > 1 or gsum > 1:
            return np.zeros(len(x))
        dd = _normal_density_derivs()
        if gsum == 0:
            if not comps:
                return np.ones(len(x))
            j = comps[0]
            p, q = i[k - 1 + j], i[2 * k - 1 + j]
            return g[j] * phi_ratio[:, j] * dd[(p, q)](x, a[j], v[j])
        m = next(c for c in range(k - 1) if gam[c])
        if not comps:
            return phi_ratio[:, m] - phi_ratio[:, k - 1]
        j = comps[0]
        coef = 1.0 if j == m else (-1.0 if j == k - 1 else 0.0)
        if coef == 0.0:
            return np.zeros(len(x))
        p, q = i[k - 1 + j], i[2 * k - 1 + j]
        return coef * phi_ratio[:, j] * dd[(p, q)](x, a[j], v[j])

    def deriv(self, x, theta, i):
        i = MultiIndex(i)
        d = self.space.d
        if i.d != d:
            raise ValueError("multi-index length does not match the parameter dimension")
        x = self.as_obs(x)
        if i.norm() == 0:
            return self.logpdf(x, theta)
        lc, g = self._comp_logpdf(x, theta)
        with np.errstate(divide="ignore"):
            lf = logsumexp(lc + np.log(g), axis=1)
        phi_ratio = np.exp(lc - lf[:, None])
        gcache: dict = {}
        lcache: dict = {}

        def gr(j):
            if j not in gcache:
                gcache[j] = self._density_ratio(x, theta, j, phi_ratio)
            return gcache[j]

        def ld(m):
            if m in lcache:
                return lcache[m]
            kk = max(c for c in range(d) if m[c])
            base = m - MultiIndex.unit(d, kk)
            val = gr(m).copy()
            for j in _sub_indices(base):
                if j.norm() == 0:
                    continue
                c = 1
                for br, jr in zip(base, j):
                    c *= comb(br, jr)
                val -= c * gr(j) * ld(base - j + MultiIndex.unit(d, kk))
            lcache[m] = val
            return val

        return ld(i)


def _sub_indices(i: MultiIndex):
    from itertools import product

    return [MultiIndex(t) for t in product(*(range(v + 1) for v in i))]


def mixture(k: int = 3) -> GaussianMixture:
    return GaussianMixture(k)


def get_model(name: str, **kwargs) -> Model:
    """Look up a bundled model by name."""
    from ..estimators.counterexamples import FergusonModel, SchwartzModel

    table = {
        "gauss1": gauss1,
        "gauss2": gauss2,
        "exprate": exprate,
        "exprates": exprates,
        "poisson": poisson,
        "bvnormal": bvnormal,
        "mvn": mvn,
        "mixture": mixture,
        "mixture3": lambda **kw: mixture(3),
        "ferguson": FergusonModel,
        "schwartz": SchwartzModel,
    }
    if name not in table:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(table)}")
    return table[name](**kwargs)


MODEL_NAMES = ("gauss1", "gauss2", "exprate", "exprates", "poisson", "bvnormal", "mvn", "mixture3", "ferguson", "schwartz")
