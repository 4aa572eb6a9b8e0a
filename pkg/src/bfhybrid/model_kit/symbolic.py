"""Models whose log-density is a sympy expression.

Derivatives are obtained by symbolic differentiation and compiled with
``lambdify``. When every derivative is a polynomial in the (centered)
observation, expectations are exact: the polynomial coefficients are combined
with the model's moment function.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from ..index_algebra import MultiIndex
from .base import Model, ParamSpace, numeric_expectation


class SymbolicModel(Model):
    """Parametric family defined by a sympy log-density.

    Parameters
    ----------
    name : str
    space : ParamSpace
    params : sequence of sympy.Symbol
        Parameter symbols, in the order of ``space.names``.
    obs : sequence of sympy.Symbol
        Observation symbols (one per observation coordinate).
    logpdf_expr : sympy.Expr
    sampler : callable
        ``sampler(theta, n, rng) -> observations``.
    center : sequence of sympy.Expr, optional
        Expressions ``c(theta)`` such that ``y = x - c(theta)`` has moments
        given by ``moment``. Defaults to zero.
    moment : callable, optional
        ``moment(theta, powers) -> E prod y_k^{p_k}``. Without it the
        expectations fall back to numeric integration.
    support : callable, optional
        Integration range for scalar observations.
    """

    def __init__(
        self,
        name: str,
        space: ParamSpace,
        params: Sequence,
        obs: Sequence,
        logpdf_expr,
        sampler: Callable,
        center: Sequence | None = None,
        moment: Callable | None = None,
        support: Callable | None = None,
        discrete_support: Callable | None = None,
    ):
        super().__init__(space)
        self.name = name
        self.params = tuple(params)
        self.obs = tuple(obs)
        self.obs_dim = len(self.obs)
        self.expr = logpdf_expr
        self._sampler = sampler
        self._center = tuple(center) if center is not None else tuple(sp.Integer(0) for _ in self.obs)
        self._moment = moment
        self._support = support
        if discrete_support is not None:
            self.discrete = True
            self._discrete_support = discrete_support
        self._args = self.obs + self.params
        self._logpdf_fn = self._compile(self.expr)
        self._dcache: dict = {}
        self._pcache: dict = {}
        self._ecache: dict = {}

    # -- compilation ----------------------------------------------------
    def _compile(self, expr):
        fn = sp.lambdify(self._args, expr, modules=["numpy", "scipy"])

        def call(x, theta):
            x = self.as_obs(x)
            cols = [x] if self.obs_dim == 1 else [x[:, k] for k in range(self.obs_dim)]
            out = fn(*cols, *np.asarray(theta, dtype=float))
            return np.broadcast_to(np.asarray(out, dtype=float), (len(x),)).copy()

        return call

    def deriv_expr(self, i):
        i = MultiIndex(i)
        if i not in self._dcache:
            if i.norm() == 0:
                e = self.expr
            else:
                # differentiate one order at a time so lower orders are reused
                k = next(j for j in range(len(i)) if i[j] > 0)
                e = sp.diff(self.deriv_expr(i - MultiIndex.unit(len(i), k)), self.params[k])
            self._dcache[i] = e
        return self._dcache[i]

    @lru_cache(maxsize=None)
    def _deriv_fn(self, i):
        return self._compile(self.deriv_expr(i))

    # -- Model interface ------------------------------------------------
    def logpdf(self, x, theta):
        return self._logpdf_fn(x, theta)

    def deriv(self, x, theta, i):
        i = MultiIndex(i)
        if i.d != self.space.d:
            raise ValueError("multi-index length does not match the parameter dimension")
        if i.norm() > self.max_order:
            raise ValueError(f"derivative order {i.norm()} above {self.max_order}")
        return self._deriv_fn(i)(x, theta)

    def sample(self, theta, n, rng):
        return self._sampler(np.asarray(theta, dtype=float), n, rng)

    def support(self, theta):
        return self._support(theta) if self._support else super().support(theta)

    def discrete_support(self, theta):
        return self._discrete_support(theta)

    @property
    def analytic_expectations(self) -> bool:
        return self._moment is not None

    # -- expectations -----------------------------------------------------
    def _poly_terms(self, i):
        """Lambdified coefficients and powers of ``l_i`` as a polynomial in the centred observation.

        None when ``l_i`` is not polynomial in the observation.
        """
        key = tuple(i)
        if key in self._pcache:
            return self._pcache[key]
        ys = sp.symbols(f"_y0:{self.obs_dim}")
        sub = {o: c + y for o, c, y in zip(self.obs, self._center, ys)}
        terms = None
        try:
            poly = sp.Poly(sp.expand(self.deriv_expr(i).subs(sub)), *ys)
        except sp.PolynomialError:
            poly = None
        if poly is not None and not any(c.has(*ys) for c in poly.coeffs()):
            coeffs = sp.lambdify(self.params, list(poly.coeffs()), modules=["numpy", "scipy"])
            terms = (coeffs, [tuple(m) for m in poly.monoms()])
        self._pcache[key] = terms
        return terms

    def _poly_expect(self, factors, theta):
        """``E prod_i l_i`` from the moment function, or None if a factor is not polynomial."""
        prod = {(0,) * self.obs_dim: 1.0}
        for i in factors:
            terms = self._poly_terms(i)
            if terms is None:
                return None
            coeffs, monoms = terms
            vals = coeffs(*theta)
            nxt: dict = {}
            for p, a in prod.items():
                for m, c in zip(monoms, vals):
                    k = tuple(x + y for x, y in zip(p, m))
                    nxt[k] = nxt.get(k, 0.0) + a * float(c)
            prod = nxt
        return float(sum(c * self._moment(theta, p) for p, c in prod.items() if c != 0.0))

    def expect(self, theta, i):
        theta = self.space.check(theta)
        i = MultiIndex(i)
        if self._moment is not None:
            val = self._poly_expect((i,), theta)
            if val is not None:
                return val
        return numeric_expectation(self, theta, i)

    def expect_product(self, theta, i, j):
        theta = self.space.check(theta)
        i, j = MultiIndex(i), MultiIndex(j)
        if self._moment is not None:
            val = self._poly_expect((i, j), theta)
            if val is not None:
                return val
        return numeric_expectation(self, theta, i, j)
