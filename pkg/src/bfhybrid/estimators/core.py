"""Shared types and the bounded Newton-Raphson maximizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LOSS_KINDS = ("power", "squared", "zero_one")


@dataclass(frozen=True)
class LossSpec:
    """Loss used for the Bayes part of an estimator.

    ``power`` is the separable loss ``sum_k (d_k - t_k)^{a_k}`` with even
    exponents; ``squared`` is ``power`` with every exponent 2; ``zero_one``
    is the limit of the indicator loss of width ``delta`` and selects the
    posterior mode.
    """

    kind: str = "squared"
    exponents: tuple = ()
    delta: float = 1e-6

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; choose from {LOSS_KINDS}")
        if self.kind == "power":
            if not self.exponents:
                raise ValueError("power loss needs exponents")
            for a in self.exponents:
                if int(a) != a or a < 2 or a % 2:
                    raise ValueError(f"power loss exponents must be even integers >= 2, got {self.exponents}")
        if self.kind == "zero_one" and not self.delta > 0:
            raise ValueError(f"zero-one loss width must be positive, got {self.delta}")

    @classmethod
    def squared(cls) -> "LossSpec":
        return cls("squared")

    @classmethod
    def zero_one(cls, delta: float = 1e-6) -> "LossSpec":
        return cls("zero_one", delta=delta)

    @classmethod
    def power(cls, exponents: Sequence[int]) -> "LossSpec":
        return cls("power", tuple(int(a) for a in exponents))

    @classmethod
    def parse(cls, text: str) -> "LossSpec":
        """``"squared"``, ``"zero_one"`` or ``"power:4,2"``."""
        kind, _, rest = text.partition(":")
        if kind == "power":
            return cls.power([int(a) for a in rest.split(",") if a])
        if kind == "zero_one" and rest:
            return cls.zero_one(float(rest))
        if rest:
            raise ValueError(f"loss {kind!r} takes no arguments")
        return cls(kind)

    def exponents_for(self, d: int) -> np.ndarray:
        if self.kind == "power":
            if len(self.exponents) == 1:
                return np.full(d, self.exponents[0])
            if len(self.exponents) != d:
                raise ValueError(f"power loss has {len(self.exponents)} exponents for {d} coordinates")
            return np.asarray(self.exponents)
        return np.full(d, 2)

    @property
    def needs_posterior_sample(self) -> bool:
        return self.kind != "zero_one"

    def __str__(self):
        if self.kind == "power":
            return "power:" + ",".join(map(str, self.exponents))
        return self.kind


@dataclass
class McmcConfig:
    """Random-walk Metropolis settings."""

    length: int = 20_000
    burn_in: int = 5_000
    scale: float | None = None
    target: float = 0.3

    def __post_init__(self):
        if self.length <= 0 or self.burn_in < 0:
            raise ValueError("chain length must be positive and burn-in non-negative")
        if self.scale is not None and self.scale <= 0:
            raise ValueError("proposal scale must be positive")
        if not 0 < self.target < 1:
            raise ValueError("target acceptance rate must lie in (0, 1)")


@dataclass
class OptimizerConfig:
    tol: float = 1e-8
    max_iter: int = 200
    restarts: int = 5
    seed: int = 0
    mcmc: McmcConfig = field(default_factory=McmcConfig)

    def __post_init__(self):
        if not self.tol > 0 or self.max_iter <= 0 or self.restarts < 0:
            raise ValueError("tol and max_iter must be positive and restarts non-negative")


@dataclass
class EstimateResult:
    theta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)


@dataclass
class HybridResult:
    """Hybrid estimate: Bayes rule on ``alpha``, maximization over ``beta``."""

    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    objective: float
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)
    alpha: tuple = ()
    theta: np.ndarray | None = None


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    fallback_steps: int


def _project(x, lower, upper, margin=1e-10):
    span = np.where(np.isfinite(upper - lower), upper - lower, 1.0)
    return np.clip(x, lower + margin * span, upper - margin * span)


def newton_maximize(
    f: Callable,
    grad: Callable,
    hess: Callable,
    x0,
    lower=None,
    upper=None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> NewtonResult:
    """Maximize ``f`` by Newton-Raphson with step halving and box projection.

    A Hessian that is not negative definite is replaced by a steepest-ascent
    step scaled by its largest absolute diagonal entry. Converged means the
    gradient norm is below ``tol`` or the Newton decrement is below
    ``tol**2`` at a negative definite Hessian.
    """
    x = np.asarray(x0, dtype=float).copy()
    d = len(x)
    lower = np.full(d, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(d, np.inf) if upper is None else np.asarray(upper, dtype=float)
    x = _project(x, lower, upper)
    fx = f(x)
    if not np.isfinite(fx):
        raise ValueError(f"objective is not finite at the starting point {x.tolist()}")
    fallback = 0
    g = grad(x)
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            return NewtonResult(x, fx, gnorm, it - 1, True, fallback)
        H = hess(x)
        try:
            L = np.linalg.cholesky(-H)
            step = np.linalg.solve(L.T, np.linalg.solve(L, g))
            newton = True
        except np.linalg.LinAlgError:
            step = g / max(np.max(np.abs(np.diag(H))), gnorm, 1.0)
            newton = False
            fallback += 1
        if newton and float(g @ step) < tol**2:
            return NewtonResult(x, fx, gnorm, it - 1, True, fallback)
        t = 1.0
        for _ in range(60):
            xn = _project(x + t * step, lower, upper)
            fn = f(xn)
            if np.isfinite(fn) and fn >= fx - 1e-14 * abs(fx):
                break
            t *= 0.5
        else:
            return NewtonResult(x, fx, gnorm, it, False, fallback)
        moved = float(np.max(np.abs(xn - x)))
        x, fx = xn, fn
        g = grad(x)
        if moved <= 1e-15 * (1.0 + float(np.max(np.abs(x)))):
            gnorm = float(np.linalg.norm(g))
            return NewtonResult(x, fx, gnorm, it, gnorm < tol, fallback)
    gnorm = float(np.linalg.norm(g))
    return NewtonResult(x, fx, gnorm, max_iter, gnorm < tol, fallback)
