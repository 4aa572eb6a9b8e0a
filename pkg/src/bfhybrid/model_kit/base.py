"""Model abstraction, Fisher information and empirical expansion statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from ..index_algebra import MultiIndex, multi_indices

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class ParamSpace:
    """Names, open bounds and the (alpha, beta) partition of a parameter vector.

    ``alpha`` lists the coordinates that get the Bayes treatment in a hybrid
    fit; the remaining coordinates form ``beta``.
    """

    names: tuple
    lower: tuple = None
    upper: tuple = None
    alpha: tuple = ()

    def __post_init__(self):
        d = len(self.names)
        if self.lower is None:
            object.__setattr__(self, "lower", (-np.inf,) * d)
        if self.upper is None:
            object.__setattr__(self, "upper", (np.inf,) * d)
        if len(self.lower) != d or len(self.upper) != d:
            raise ValueError("bounds must match the number of parameters")
        alpha = tuple(sorted(int(a) for a in self.alpha))
        if any(not 0 <= a < d for a in alpha) or len(set(alpha)) != len(alpha):
            raise ValueError(f"invalid alpha coordinates {self.alpha}")
        object.__setattr__(self, "alpha", alpha)

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def d1(self) -> int:
        return len(self.alpha)

    @property
    def d2(self) -> int:
        return self.d - self.d1

    @property
    def beta(self) -> tuple:
        return tuple(k for k in range(self.d) if k not in self.alpha)

    def with_alpha(self, alpha: Sequence) -> "ParamSpace":
        """Copy with a different alpha block, given by indices or names."""
        idx = tuple(self.names.index(a) if isinstance(a, str) else int(a) for a in alpha)
        return ParamSpace(self.names, self.lower, self.upper, idx)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(
            theta.shape == (self.d,)
            and np.all(np.isfinite(theta))
            and np.all(theta > np.asarray(self.lower))
            and np.all(theta < np.asarray(self.upper))
        )

    def check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if not self.contains(theta):
            raise ValueError(f"parameter {theta.tolist()} outside {self.names} bounds")
        return theta

    def project(self, theta, margin: float = 1e-10) -> np.ndarray:
        """Clip into the closed box shrunk by a relative margin."""
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        span = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
        return np.clip(theta, lo + margin * span, hi - margin * span)


class Model:
    """Base class for a parametric family ``f(x | theta)``.

    Subclasses implement :meth:`logpdf`, :meth:`deriv` and :meth:`sample`.
    :meth:`expect` and :meth:`expect_product` default to numeric integration
    against the model's own density.
    """

    name = "model"
    obs_dim = 1
    max_order = 4
    discrete = False

    def __init__(self, space: ParamSpace):
        self.space = space

    # -- required -------------------------------------------------------
    def logpdf(self, x, theta) -> np.ndarray:
        raise NotImplementedError

    def deriv(self, x, theta, i) -> np.ndarray:
        """``l_i(x | theta)`` for each observation in ``x``."""
        raise NotImplementedError

    def sample(self, theta, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    # -- optional -------------------------------------------------------
    @property
    def analytic_expectations(self) -> bool:
        return False

    def expect(self, theta, i) -> float:
        """``E_theta l_i(X | theta)``."""
        return numeric_expectation(self, theta, i)

    def expect_product(self, theta, i, j) -> float:
        """``E_theta [l_i(X | theta) l_j(X | theta)]``."""
        return numeric_expectation(self, theta, i, j)

    def support(self, theta) -> tuple:
        """Integration range of a scalar observation."""
        return (-np.inf, np.inf)

    def discrete_support(self, theta) -> np.ndarray:
        raise NotImplementedError

    def pdf(self, x, theta) -> np.ndarray:
        return np.exp(self.logpdf(x, theta))

    def loglik(self, sample, theta) -> float:
        return float(np.sum(self.logpdf(sample, theta)))

    def as_obs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.obs_dim == 1:
            return x.reshape(-1)
        return x.reshape(-1, self.obs_dim)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, d={self.space.d})"


def _integrand(model, theta, i, j):
    i = MultiIndex(i)
    if j is None:
        return lambda x: model.deriv(x, theta, i)
    j = MultiIndex(j)
    return lambda x: model.deriv(x, theta, i) * model.deriv(x, theta, j)


def numeric_expectation(
    model: Model,
    theta,
    i,
    j=None,
    budget: int | None = None,
    seed: int | None = None,
    tol: float | None = None,
    return_error: bool = False,
):
    """Expectation of ``l_i``, or of ``l_i * l_j`` when ``j`` is given.

    Scalar continuous observations use adaptive quadrature, discrete ones
    exact summation over the (truncated) support, two-dimensional ones nested
    quadrature, and anything else seeded Monte Carlo.

    Parameters
    ----------
    budget : int, optional
        Monte Carlo sample count (default 200_000).
    seed : int, optional
        Monte Carlo seed (default 0).
    tol : float, optional
        Maximum acceptable absolute error; exceeded errors raise.
    return_error : bool
        Also return the error estimate.
    """
    theta = model.space.check(theta)
    g = _integrand(model, theta, i, j)

    if model.discrete:
        pts = model.discrete_support(theta)
        w = model.pdf(pts, theta)
        val, err = float(np.sum(g(pts) * w)), 0.0
    elif model.obs_dim == 1 and budget is None:
        lo, hi = model.support(theta)

        def f(x):
            return float(g(np.array([x]))[0] * model.pdf(np.array([x]), theta)[0])

        val, err = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=400)
    elif model.obs_dim == 2 and budget is None:
        lims = model.support(theta)

        def f(x2, x1):
            x = np.array([[x1, x2]])
            return float(g(x)[0] * model.pdf(x, theta)[0])

        val, err = integrate.nquad(
            f, [lims[1], lims[0]], opts={"epsabs": 1e-11, "epsrel": 1e-9, "limit": 200}
        )
    else:
        rng = np.random.default_rng(0 if seed is None else seed)
        xs = model.sample(theta, budget or 200_000, rng)
        vals = g(xs)
        val = float(vals.mean())
        err = float(vals.std(ddof=1) / np.sqrt(len(vals)))
    if tol is not None and err > tol:
        raise RuntimeError(f"expectation error {err:.3g} exceeds tolerance {tol:.3g}")
    return (val, err) if return_error else val


@dataclass
class FisherBlocks:
    """Fisher information, its inverse and their (alpha, beta) blocks.

    ``I11`` etc. are blocks of ``I``; ``I_11`` style upper-index blocks of the
    inverse are stored as ``Iinv11``, ``Iinv12``, ``Iinv21``, ``Iinv22``.
    """

    I: np.ndarray
    Iinv: np.ndarray
    alpha: tuple = ()
    beta: tuple = ()

    def block(self, M, rows, cols):
        return M[np.ix_(rows, cols)]

    @property
    def I11(self):
        return self.block(self.I, self.alpha, self.alpha)

    @property
    def I12(self):
        return self.block(self.I, self.alpha, self.beta)

    @property
    def I21(self):
        return self.block(self.I, self.beta, self.alpha)

    @property
    def I22(self):
        return self.block(self.I, self.beta, self.beta)

    @property
    def Iinv11(self):
        return self.block(self.Iinv, self.alpha, self.alpha)

    @property
    def Iinv12(self):
        return self.block(self.Iinv, self.alpha, self.beta)

    @property
    def Iinv21(self):
        return self.block(self.Iinv, self.beta, self.alpha)

    @property
    def Iinv22(self):
        return self.block(self.Iinv, self.beta, self.beta)


def fisher_information(model: Model, theta) -> FisherBlocks:
    """``I_jk = -E l_{e_j + e_k}``, inverted through its Cholesky factor."""
    theta = model.space.check(theta)
    d = model.space.d
    I = np.empty((d, d))
    for j in range(d):
        for k in range(j, d):
            idx = MultiIndex.unit(d, j) + MultiIndex.unit(d, k)
            I[j, k] = I[k, j] = -model.expect(theta, idx)
    try:
        L = np.linalg.cholesky(I)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"Fisher information not positive definite at {theta.tolist()}") from exc
    Linv = np.linalg.solve(L, np.eye(d))
    Iinv = Linv.T @ Linv
    return FisherBlocks(I, Iinv, model.space.alpha, model.space.beta)


@dataclass
class EmpiricalStats:
    """Centered normalized derivative sums and their expectations at ``theta0``.

    Scalar maps are keyed by MultiIndex: ``sdelta[i] = n^{-1/2} sum_j (l_i(x_j) -
    E l_i)`` and ``sexpect[i] = E l_i``. Vector statistics use the stack
    convention: component k of ``delta(i)`` is ``sdelta[i + e_k]`` and of
    ``expect(i)`` is ``sexpect[i + e_k]``.
    """

    theta0: np.ndarray
    n: int
    sdelta: dict
    sexpect: dict
    fisher: FisherBlocks
    max_order: int
    sample_size_check: float = field(default=0.0, repr=False)

    @property
    def d(self) -> int:
        return len(self.theta0)

    def delta(self, i) -> np.ndarray:
        i = MultiIndex(i)
        return np.array([self.sdelta[i + MultiIndex.unit(self.d, k)] for k in range(self.d)])

    def expect(self, i) -> np.ndarray:
        i = MultiIndex(i)
        return np.array([self.sexpect[i + MultiIndex.unit(self.d, k)] for k in range(self.d)])

    def raw(self, i) -> np.ndarray:
        """``S_i = Delta_i + sqrt(n) E_i``."""
        return self.delta(i) + np.sqrt(self.n) * self.expect(i)

    @property
    def delta0(self) -> np.ndarray:
        return self.delta(MultiIndex.zeros(self.d))

    def restrict(self, coords: Sequence[int]) -> "EmpiricalStats":
        """Statistics of the sub-model that varies only ``coords``."""
        coords = tuple(coords)
        sub_d = len(coords)

        def lift(j):
            full = [0] * self.d
            for c, v in zip(coords, j):
                full[c] = v
            return MultiIndex(full)

        sd, se = {}, {}
        for order in range(1, self.max_order + 2):
            for j in multi_indices(sub_d, order):
                f = lift(j)
                if f in self.sdelta:
                    sd[j] = self.sdelta[f]
                if f in self.sexpect:
                    se[j] = self.sexpect[f]
        I = self.fisher.I[np.ix_(coords, coords)]
        Iinv = self.fisher.Iinv[np.ix_(coords, coords)]
        return EmpiricalStats(
            self.theta0[list(coords)], self.n, sd, se, FisherBlocks(I, Iinv), self.max_order
        )


def expectation_table(model: Model, theta, max_order: int) -> dict:
    theta = model.space.check(theta)
    d = model.space.d
    return {i: model.expect(theta, i) for o in range(1, max_order + 1) for i in multi_indices(d, o)}


def expected_stats(model: Model, theta, fisher: FisherBlocks | None = None) -> EmpiricalStats:
    """Statistics with every ``Delta_i`` zero and ``E_i`` (|i| <= 3) at ``theta``.

    The constant parts of the expansion corrections depend only on these.
    """
    theta = model.space.check(theta)
    f = fisher if fisher is not None else fisher_information(model, theta)
    sexpect = expectation_table(model, theta, 3)
    return EmpiricalStats(theta.copy(), 1, {i: 0.0 for i in sexpect}, sexpect, f, 2)


def empirical_stats(model: Model, sample, theta0, max_order: int = 3, fisher=None) -> EmpiricalStats:
    """Compute ``Delta_i`` (|i| <= max_order) and ``E_i`` (|i| <= max_order).

    Parameters
    ----------
    model : Model
    sample : array_like
        Observations (first axis indexes observations).
    theta0 : array_like
        Expansion point.
    max_order : int
        Highest vector order; scalar derivatives up to ``max_order + 1`` are used.
    """
    if max_order > 3:
        raise ValueError("max_order must be <= 3")
    theta0 = model.space.check(theta0)
    x = model.as_obs(sample)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two observations")
    d = model.space.d
    sexpect = expectation_table(model, theta0, max_order + 1)
    sdelta = {}
    for o in range(1, max_order + 2):
        for i in multi_indices(d, o):
            vals = model.deriv(x, theta0, i) - sexpect[i]
            s = float(np.sum(vals)) / np.sqrt(n)
            if not np.isfinite(s):
                raise FloatingPointError(f"non-finite derivative sum for index {tuple(i)}")
            sdelta[i] = s
    if fisher is None:
        fisher = fisher_information(model, theta0)
    return EmpiricalStats(theta0, n, sdelta, sexpect, fisher, max_order)


def score_vector(model: Model, sample, theta) -> np.ndarray:
    x = model.as_obs(sample)
    d = model.space.d
    return np.array([np.sum(model.deriv(x, theta, MultiIndex.unit(d, k))) for k in range(d)])


def hessian_matrix(model: Model, sample, theta) -> np.ndarray:
    x = model.as_obs(sample)
    d = model.space.d
    H = np.empty((d, d))
    for j in range(d):
        for k in range(j, d):
            idx = MultiIndex.unit(d, j) + MultiIndex.unit(d, k)
            H[j, k] = H[k, j] = np.sum(model.deriv(x, theta, idx))
    return H


@dataclass
class FdReport:
    max_rel_dev: float
    worst_index: tuple
    flagged: bool


def fd_check(model: Model, theta, observation, order: int, tol: float = 1e-4) -> FdReport:
    """Compare order-``order`` derivatives with central differences of order ``order - 1``."""
    if not 1 <= order <= 3:
        raise ValueError("order must be 1, 2 or 3")
    theta = model.space.check(theta)
    x = model.as_obs(observation)
    d = model.space.d
    step = EPS ** (1 / 3) if order < 3 else EPS ** (1 / 4)
    worst, worst_i = 0.0, None
    analytic, numeric = {}, {}
    for i in multi_indices(d, order):
        k = next(j for j in range(d) if i[j] > 0)
        lower = i - MultiIndex.unit(d, k)
        h = max(1.0, abs(theta[k])) * step
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        if lower.norm() == 0:
            fp, fm = model.logpdf(x, tp), model.logpdf(x, tm)
        else:
            fp, fm = model.deriv(x, tp, lower), model.deriv(x, tm, lower)
        numeric[i] = (fp - fm) / (2 * h)
        analytic[i] = model.deriv(x, theta, i)
    scale = max(1.0, max(np.abs(v).max() for v in analytic.values()))
    for i in analytic:
        a, f = analytic[i], numeric[i]
        dev = np.abs(a - f) / (np.maximum(np.abs(a), np.abs(f)) + 1e-6 * scale)
        if dev.max() > worst:
            worst, worst_i = float(dev.max()), tuple(i)
    return FdReport(worst, worst_i, worst > tol)
