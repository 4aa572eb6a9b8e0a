"""Log-prior densities over parameter coordinates.

A :class:`PriorSpec` is a sum of independent terms, each a distribution on
a tuple of coordinates of the full parameter vector. Terms may span both
blocks of a hybrid problem, which is how priors on ``alpha`` that depend on
``beta`` are expressed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln, multigammaln

from ..expansion import PriorDerivatives
from ..index_algebra import MultiIndex
from ..model_kit.base import Model

_EPS3 = np.finfo(float).eps ** (1 / 3)
_EPS4 = np.finfo(float).eps ** (1 / 4)


class Distribution:
    """Log-density on ``dim`` coordinates, unnormalized constants allowed.

    Gradient and Hessian default to central differences.
    """

    dim = 1

    def logpdf(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty(len(x))
        for k in range(len(x)):
            h = _EPS3 * max(1.0, abs(x[k]))
            e = np.zeros(len(x))
            e[k] = h
            out[k] = (self.logpdf(x + e) - self.logpdf(x - e)) / (2 * h)
        return out

    def hess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = len(x)
        H = np.empty((m, m))
        for k in range(m):
            h = _EPS4 * max(1.0, abs(x[k]))
            e = np.zeros(m)
            e[k] = h
            H[k] = (self.grad(x + e) - self.grad(x - e)) / (2 * h)
        return (H + H.T) / 2


@dataclass
class Flat(Distribution):
    def logpdf(self, x) -> float:
        return 0.0

    def grad(self, x):
        return np.zeros(1)

    def hess(self, x):
        return np.zeros((1, 1))


@dataclass
class Normal(Distribution):
    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError(f"normal variance must be positive, got {self.var}")

    def logpdf(self, x) -> float:
        z = float(np.asarray(x).reshape(-1)[0]) - self.mean
        return -0.5 * np.log(2 * np.pi * self.var) - z * z / (2 * self.var)

    def grad(self, x):
        return np.array([-(float(np.asarray(x).reshape(-1)[0]) - self.mean) / self.var])

    def hess(self, x):
        return np.array([[-1.0 / self.var]])


@dataclass
class MvNormal(Distribution):
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float)
        self.dim = len(self.mean)
        self._prec = np.linalg.inv(self.cov)
        sign, logdet = np.linalg.slogdet(self.cov)
        if sign <= 0:
            raise ValueError("normal covariance must be positive definite")
        self._const = -0.5 * (self.dim * np.log(2 * np.pi) + logdet)

    def logpdf(self, x) -> float:
        z = np.asarray(x, dtype=float) - self.mean
        return float(self._const - 0.5 * z @ self._prec @ z)

    def grad(self, x):
        return -self._prec @ (np.asarray(x, dtype=float) - self.mean)

    def hess(self, x):
        return -self._prec


@dataclass
class Uniform(Distribution):
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError(f"uniform needs low < high, got ({self.low}, {self.high})")

    def logpdf(self, x) -> float:
        v = float(np.asarray(x).reshape(-1)[0])
        return -np.log(self.high - self.low) if self.low <= v <= self.high else -np.inf

    def grad(self, x):
        return np.zeros(1)

    def hess(self, x):
        return np.zeros((1, 1))


@dataclass
class Exponential(Distribution):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"exponential rate must be positive, got {self.rate}")

    def logpdf(self, x) -> float:
        v = float(np.asarray(x).reshape(-1)[0])
        return np.log(self.rate) - self.rate * v if v >= 0 else -np.inf

    def grad(self, x):
        return np.array([-self.rate])

    def hess(self, x):
        return np.zeros((1, 1))


@dataclass
class Gamma(Distribution):
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("gamma shape and rate must be positive")

    def logpdf(self, x) -> float:
        v = float(np.asarray(x).reshape(-1)[0])
        if v <= 0:
            return -np.inf
        a, b = self.shape, self.rate
        return a * np.log(b) - gammaln(a) + (a - 1) * np.log(v) - b * v

    def grad(self, x):
        v = float(np.asarray(x).reshape(-1)[0])
        return np.array([(self.shape - 1) / v - self.rate])

    def hess(self, x):
        v = float(np.asarray(x).reshape(-1)[0])
        return np.array([[-(self.shape - 1) / v**2]])


@dataclass
class InvGamma(Distribution):
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("inverse-gamma shape and scale must be positive")

    def logpdf(self, x) -> float:
        v = float(np.asarray(x).reshape(-1)[0])
        if v <= 0:
            return -np.inf
        a, b = self.shape, self.scale
        return a * np.log(b) - gammaln(a) - (a + 1) * np.log(v) - b / v

    def grad(self, x):
        v = float(np.asarray(x).reshape(-1)[0])
        return np.array([-(self.shape + 1) / v + self.scale / v**2])

    def hess(self, x):
        v = float(np.asarray(x).reshape(-1)[0])
        return np.array([[(self.shape + 1) / v**2 - 2 * self.scale / v**3]])


@dataclass
class StickUniform(Distribution):
    """``g_1 ~ U(0, top)`` and ``g_j | g_<j ~ U(0, 1 - sum g_<j)``."""

    top: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if not 0 < self.top <= 1:
            raise ValueError(f"stick top must lie in (0, 1], got {self.top}")

    def logpdf(self, x) -> float:
        g = np.asarray(x, dtype=float).reshape(-1)
        if g[0] < 0 or g[0] > self.top:
            return -np.inf
        out = -np.log(self.top)
        used = g[0]
        for v in g[1:]:
            rest = 1.0 - used
            if v < 0 or v > rest or rest <= 0:
                return -np.inf
            out -= np.log(rest)
            used += v
        return float(out)


def _vech_to_matrix(v, p):
    M = np.zeros((p, p))
    k = 0
    for i in range(p):
        for j in range(i + 1):
            M[i, j] = M[j, i] = v[k]
            k += 1
    return M


@dataclass
class Wishart(Distribution):
    """Wishart density on ``vech(Omega)`` (lower triangle, row-major)."""

    df: float
    scale: np.ndarray

    def __post_init__(self):
        self.scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        self.p = self.scale.shape[0]
        if self.df <= self.p - 1:
            raise ValueError(f"Wishart degrees of freedom must exceed {self.p - 1}")
        self.dim = self.p * (self.p + 1) // 2
        self._scale_inv = np.linalg.inv(self.scale)
        _, logdet = np.linalg.slogdet(self.scale)
        nu, p = self.df, self.p
        self._const = -(nu * p / 2) * np.log(2) - (nu / 2) * logdet - multigammaln(nu / 2, p)

    def logpdf(self, x) -> float:
        M = _vech_to_matrix(np.asarray(x, dtype=float), self.p)
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            return -np.inf
        _, logdet = np.linalg.slogdet(M)
        return float(self._const + (self.df - self.p - 1) / 2 * logdet - np.trace(self._scale_inv @ M) / 2)


@dataclass
class PseudoObservation(Distribution):
    """``log f(x0 | theta)`` of a model, used as a prior that shares the model's parameters.

    A normal prior on a mean with the model's own unknown covariance is the
    pseudo-observation ``x0`` equal to the prior mean.
    """

    model: Model
    x0: np.ndarray

    def __post_init__(self):
        self.x0 = self.model.as_obs(self.x0)
        self.dim = self.model.space.d

    def logpdf(self, x) -> float:
        with np.errstate(all="ignore"):
            v = self.model.loglik(self.x0, np.asarray(x, dtype=float))
        return float(v) if np.isfinite(v) else -np.inf

    def grad(self, x):
        d = self.dim
        return np.array([np.sum(self.model.deriv(self.x0, x, MultiIndex.unit(d, k))) for k in range(d)])

    def hess(self, x):
        d = self.dim
        H = np.empty((d, d))
        for j in range(d):
            for k in range(j, d):
                idx = MultiIndex.unit(d, j) + MultiIndex.unit(d, k)
                H[j, k] = H[k, j] = np.sum(self.model.deriv(self.x0, x, idx))
        return H


DISTRIBUTIONS = {
    "flat": (Flat, 0),
    "normal": (Normal, 2),
    "uniform": (Uniform, 2),
    "exponential": (Exponential, 1),
    "gamma": (Gamma, 2),
    "invgamma": (InvGamma, 2),
    "stick": (StickUniform, 1),
}


@dataclass
class PriorTerm:
    coords: tuple
    dist: Distribution

    def __post_init__(self):
        self.coords = tuple(int(c) for c in self.coords)
        if len(self.coords) != self.dist.dim:
            raise ValueError(f"{type(self.dist).__name__} has dimension {self.dist.dim}, given coordinates {self.coords}")


@dataclass
class PriorSpec:
    """Sum of log-prior terms on a ``d``-dimensional parameter.

    Coordinates not covered by any term carry a flat prior.
    """

    d: int
    terms: list = field(default_factory=list)

    def __post_init__(self):
        for t in self.terms:
            if any(not 0 <= c < self.d for c in t.coords):
                raise ValueError(f"prior term coordinates {t.coords} outside 0..{self.d - 1}")

    @classmethod
    def flat(cls, d: int) -> "PriorSpec":
        return cls(d, [])

    def add(self, coords, dist: Distribution) -> "PriorSpec":
        coords = (coords,) if np.isscalar(coords) else tuple(coords)
        self.terms.append(PriorTerm(coords, dist))
        self.__post_init__()
        return self

    @property
    def is_flat(self) -> bool:
        return all(isinstance(t.dist, Flat) for t in self.terms)

    @property
    def coords(self) -> set:
        return {c for t in self.terms if not isinstance(t.dist, Flat) for c in t.coords}

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        total = 0.0
        for t in self.terms:
            total += t.dist.logpdf(theta[list(t.coords)])
            if not np.isfinite(total):
                return -np.inf
        return float(total)

    def grad(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        g = np.zeros(self.d)
        for t in self.terms:
            g[list(t.coords)] += t.dist.grad(theta[list(t.coords)])
        return g

    def hess(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        H = np.zeros((self.d, self.d))
        for t in self.terms:
            c = list(t.coords)
            H[np.ix_(c, c)] += t.dist.hess(theta[c])
        return H

    def derivatives(self, theta, coords: Sequence[int] | None = None) -> PriorDerivatives:
        """Gradient and Hessian of ``log pi`` at ``theta`` for the expansion, optionally restricted."""
        g, H = self.grad(theta), self.hess(theta)
        if coords is not None:
            c = list(coords)
            g, H = g[c], H[np.ix_(c, c)]
        return PriorDerivatives.from_arrays(g, H)

    @classmethod
    def parse(cls, specs: Sequence[str], names: Sequence[str]) -> "PriorSpec":
        """Build from strings ``"name[,name...]:dist:p1:p2"``.

        ``dist`` is one of ``flat``, ``normal:mean:var``, ``uniform:low:high``,
        ``exponential:rate``, ``gamma:shape:rate``, ``invgamma:shape:scale``
        and ``stick:top`` (the last spans several weights).
        """
        names = list(names)
        prior = cls(len(names))
        for s in specs:
            parts = s.split(":")
            if len(parts) < 2:
                raise ValueError(f"prior {s!r} must look like name:dist:params")
            coord_names, dist, params = parts[0].split(","), parts[1], parts[2:]
            if dist not in DISTRIBUTIONS:
                raise ValueError(f"unknown prior distribution {dist!r}; choose from {sorted(DISTRIBUTIONS)}")
            for nm in coord_names:
                if nm not in names:
                    raise ValueError(f"unknown parameter {nm!r}; choose from {names}")
            klass, nparams = DISTRIBUTIONS[dist]
            if len(params) != nparams:
                raise ValueError(f"{dist} prior takes {nparams} parameters, got {len(params)} in {s!r}")
            try:
                values = [float(p) for p in params]
            except ValueError:
                raise ValueError(f"non-numeric prior parameter in {s!r}") from None
            coords = tuple(names.index(nm) for nm in coord_names)
            if dist == "stick":
                d_ = klass(values[0], dim=len(coords))
            else:
                if len(coords) != 1:
                    raise ValueError(f"{dist} prior applies to a single parameter, got {coord_names}")
                d_ = klass(*values)
            prior.add(coords, d_)
        return prior
