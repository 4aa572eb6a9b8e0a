"""First three asymptotic expansion terms of the MLE, MAP, Bayes and hybrid estimators.

All estimators share the form ``theta0 + n^{-1/2} (T_0 + n^{-1/2} T_1 + n^{-1} T_2 + ...)``.
The H-terms solve the estimating equation order by order: substituting
``u = sum_v eps^v H_v`` (``eps = n^{-1/2}``) into the Taylor-expanded score
and collecting powers of ``eps`` through the index sets of
:func:`~bfhybrid.index_algebra.enumerate_rsli`. The Bayes corrections ``Q_1``,
``Q_2`` use the loss-weighted Gaussian moments of :mod:`bfhybrid.gauss_moments`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .gauss_moments import (
    check_loss_exponents,
    loss_moment_vector,
    loss_normalizer,
    psi_derivative,
    psi_vector,
)
from .index_algebra import MultiIndex, enumerate_rsli, hadamard_power_product, multi_indices
from .model_kit.base import EmpiricalStats

MAX_ORDER = 2
Q2_FORMS = ("complete", "printed")


@dataclass
class PriorDerivatives:
    """Log-prior gradient and its first derivatives at ``theta0``.

    ``rho[0]`` is the gradient of ``log pi`` and ``rho[e_j]`` is its partial
    derivative in coordinate ``j`` (row ``j`` of the Hessian).
    """

    rho: dict

    @property
    def d(self) -> int:
        return len(next(iter(self.rho.values())))

    @classmethod
    def flat(cls, d: int) -> "PriorDerivatives":
        return cls.from_arrays(np.zeros(d), np.zeros((d, d)))

    @classmethod
    def from_arrays(cls, grad, hess) -> "PriorDerivatives":
        grad = np.asarray(grad, dtype=float).reshape(-1)
        hess = np.asarray(hess, dtype=float)
        d = len(grad)
        if hess.shape != (d, d):
            raise ValueError(f"Hessian shape {hess.shape} does not match gradient length {d}")
        rho = {MultiIndex.zeros(d): grad}
        for j in range(d):
            rho[MultiIndex.unit(d, j)] = hess[j].copy()
        return cls(rho)

    @classmethod
    def from_callables(cls, grad: Callable, hess: Callable, theta0) -> "PriorDerivatives":
        return cls.from_arrays(grad(theta0), hess(theta0))

    def gradient(self) -> np.ndarray:
        return self.rho[MultiIndex.zeros(self.d)]

    def hessian(self) -> np.ndarray:
        return np.array([self.rho[MultiIndex.unit(self.d, j)] for j in range(self.d)])

    def restrict(self, coords: Sequence[int]) -> "PriorDerivatives":
        """Derivatives with respect to ``coords`` only (the ``rho^1`` block)."""
        coords = list(coords)
        return PriorDerivatives.from_arrays(self.gradient()[coords], self.hessian()[np.ix_(coords, coords)])


@dataclass
class ExpansionTerms:
    """Expansion vectors ``terms[r]`` for ``r = 0, 1, 2``.

    ``corrections`` holds the Bayes pieces (``Q1``, ``Q2`` and, for the
    hybrid, ``q1``, ``q2``) when they apply.
    """

    kind: str
    terms: list
    corrections: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def scaled_sum(self, n: int, upto: int = MAX_ORDER) -> np.ndarray:
        """``sum_{r <= upto} n^{-r/2} T_r``, the approximation of ``sqrt(n)(est - theta0)``."""
        return sum(n ** (-r / 2) * self.terms[r] for r in range(upto + 1))

    def estimate(self, theta0, n: int, upto: int = MAX_ORDER) -> np.ndarray:
        return np.asarray(theta0, dtype=float) + self.scaled_sum(n, upto) / np.sqrt(n)


def power_coefficient(H: Sequence[np.ndarray], i: MultiIndex, s: int) -> float:
    """Coefficient of ``eps^s`` in ``<(sum_v eps^v H_v)^i> / i!``.

    Sums ``prod_v <H_v^{i_v}> / i_v!`` over the index set ``(0, s, l, i)`` for
    every ``|l| = s``. ``H`` must hold ``H_0 .. H_s``.
    """
    i = MultiIndex(i)
    if s < 0:
        return 0.0
    if s >= len(H):
        raise ValueError(f"power coefficient of order {s} needs H_0..H_{s}")
    total = 0.0
    for l in multi_indices(i.d, s):
        for assign in enumerate_rsli(0, s, l, i):
            term = 1.0
            for v, iv in enumerate(assign):
                if iv.norm():
                    term *= hadamard_power_product(H[v], iv) / iv.factorial()
            total += term
    return total


def _require_orders(stats: EmpiricalStats, t: int):
    if stats.max_order < t + 1 and t > 0:
        raise ValueError(f"order-{t} term needs statistics with max_order >= {t + 1}")


def _h_term(stats: EmpiricalStats, H: list, t: int, prior: PriorDerivatives | None) -> np.ndarray:
    """Solve the order-``eps^t`` estimating equation for ``H_t`` given ``H_0..H_{t-1}``.

    Collects ``Delta_i`` terms with ``|i| <= t``, ``E_i`` terms with
    ``|i| <= t + 1`` (excluding the ``-I H_t`` piece) and, for a prior,
    ``rho_j`` terms with ``|j| <= t - 1``.
    """
    d = stats.d
    if t == 0:
        return stats.fisher.Iinv @ stats.delta0
    _require_orders(stats, t)
    acc = np.zeros(d)
    for k in range(1, t + 1):
        for i in multi_indices(d, k):
            acc += stats.delta(i) * power_coefficient(H, i, t - k)
    for k in range(1, t + 2):
        for i in multi_indices(d, k):
            s = t + 1 - k
            if s == t:
                continue  # the linear term carrying H_t itself
            acc += stats.expect(i) * power_coefficient(H, i, s)
    if prior is not None:
        for k in range(0, t):
            for j in multi_indices(d, k):
                if j not in prior.rho:
                    raise ValueError(f"prior derivative of order {k} required")
                acc += prior.rho[j] * power_coefficient(H, j, t - 1 - k)
    return stats.fisher.Iinv @ acc


def _h_terms(stats: EmpiricalStats, prior: PriorDerivatives | None) -> list:
    H: list = []
    for t in range(MAX_ORDER + 1):
        H.append(_h_term(stats, H, t, prior))
    return H


def _check_prior(prior: PriorDerivatives, d: int):
    if prior.d != d:
        raise ValueError(f"prior dimension {prior.d} does not match parameter dimension {d}")


def mle_terms(stats: EmpiricalStats) -> ExpansionTerms:
    """``H_0, H_1, H_2`` of the maximum likelihood estimator."""
    return ExpansionTerms("MLE", _h_terms(stats, None), provenance={"stats": stats})


def map_terms(stats: EmpiricalStats, prior: PriorDerivatives) -> ExpansionTerms:
    """Expansion terms of the posterior mode under ``prior``."""
    _check_prior(prior, stats.d)
    return ExpansionTerms("MAP", _h_terms(stats, prior), provenance={"stats": stats, "prior": prior})


# -- Bayes corrections -------------------------------------------------------


def _third_order_indices(d: int):
    return multi_indices(d, 3)


def bayes_q1(stats: EmpiricalStats, a, normalization: str = "moment") -> np.ndarray:
    """``Q_1 = Sigma^{-1} sum_{|i|=3} Psi_i E_i / i!`` with ``Psi`` under ``N(0, I^{-1})``."""
    a = check_loss_exponents(a)
    S = stats.fisher.Iinv
    if a.d != stats.d:
        raise ValueError(f"loss exponents have length {a.d}, expected {stats.d}")
    acc = np.zeros(stats.d)
    for i in _third_order_indices(stats.d):
        e = stats.sexpect[i]
        if e != 0.0:
            acc += psi_vector(i, a, S) * e / i.factorial()
    return np.linalg.solve(loss_normalizer(a, S, normalization), acc)


def _n_stat(stats: EmpiricalStats, s: MultiIndex, h0: np.ndarray) -> float:
    """``(delta_s + sum_{|l|=1} E_{s+l} <h0^l>) / s!`` with scalar statistics."""
    d = stats.d
    val = stats.sdelta[s]
    for l in multi_indices(d, 1):
        val += stats.sexpect[s + l] * hadamard_power_product(h0, l)
    return val / s.factorial()


def bayes_m02(stats: EmpiricalStats, a, normalization: str = "moment", form: str = "complete") -> np.ndarray:
    """``M_{0,2} = Sigma^{-1} sum_i N_{i,2} Psi_i``.

    ``form="printed"`` keeps only the ``|i| = 3`` terms. ``form="complete"``
    also keeps ``|i| = 5``, where
    ``N_{i,2} = sum_{s + j = i, |s|=2, |j|=3} N_{s,1} E_j / j!`` couples the
    sample curvature with the third-order expectations.
    """
    if form not in Q2_FORMS:
        raise ValueError(f"unknown Q2 form {form!r}; choose from {Q2_FORMS}")
    a = check_loss_exponents(a)
    S = stats.fisher.Iinv
    d = stats.d
    h0 = S @ stats.delta0
    acc = np.zeros(d)
    for i in _third_order_indices(d):
        acc += _n_stat(stats, i, h0) * psi_vector(i, a, S)
    if form == "complete":
        for s in multi_indices(d, 2):
            ns = _n_stat(stats, s, h0)
            if ns == 0.0:
                continue
            for j in _third_order_indices(d):
                e = stats.sexpect[j]
                if e != 0.0:
                    acc += ns * e / j.factorial() * loss_moment_vector(s + j, a, S)
    return np.linalg.solve(loss_normalizer(a, S, normalization), acc)


def bayes_m1(stats: EmpiricalStats, a, k: int, normalization: str = "moment") -> np.ndarray:
    """``M_{e_k,1} = Sigma^{-1} sum_{|s|=2} N_{s,1} dPsi_s/du_k(0)``."""
    a = check_loss_exponents(a)
    S = stats.fisher.Iinv
    h0 = S @ stats.delta0
    acc = np.zeros(stats.d)
    for s in multi_indices(stats.d, 2):
        acc += _n_stat(stats, s, h0) * psi_derivative(s, k, a, S)
    return np.linalg.solve(loss_normalizer(a, S, normalization), acc)


def bayes_q2(
    stats: EmpiricalStats,
    a,
    q1: np.ndarray | None = None,
    normalization: str = "moment",
    form: str = "complete",
) -> np.ndarray:
    """``Q_2 = M_{0,2} + sum_{|i|=1} i! M_{i,1} <Q_1^i> / i!``; see :func:`bayes_m02` for ``form``."""
    if stats.max_order < 3:
        raise ValueError("Q_2 needs statistics with max_order >= 3")
    if q1 is None:
        q1 = bayes_q1(stats, a, normalization)
    out = bayes_m02(stats, a, normalization, form)
    Q = [np.zeros(stats.d), q1]
    for i in multi_indices(stats.d, 1):
        k = i.index(1)
        coef = sum(
            hadamard_power_product(Q[1], assign[0]) / assign[0].factorial()
            for assign in enumerate_rsli(1, 1, i, i)
        )
        out = out + i.factorial() * bayes_m1(stats, a, k, normalization) * coef
    return out


def bayes_terms(
    stats: EmpiricalStats,
    prior: PriorDerivatives,
    loss,
    normalization: str = "moment",
    q2_form: str = "complete",
) -> ExpansionTerms:
    """``G_r = H_r + Q_r`` for the Bayes estimator under power loss ``loss``.

    Parameters
    ----------
    loss : sequence of int
        Even loss exponents ``a``.
    normalization : {"moment", "stein"}
        Matrix scaling the correction sums; see :func:`~bfhybrid.gauss_moments.loss_normalizer`.
    q2_form : {"complete", "printed"}
        Whether ``M_{0,2}`` includes the fifth-order moment terms; see :func:`bayes_m02`.
    """
    _check_prior(prior, stats.d)
    H = _h_terms(stats, prior)
    q1 = bayes_q1(stats, loss, normalization)
    q2 = bayes_q2(stats, loss, q1, normalization, q2_form)
    return ExpansionTerms(
        "BAYES",
        [H[0], H[1] + q1, H[2] + q2],
        {"Q1": q1, "Q2": q2},
        {
            "stats": stats,
            "prior": prior,
            "loss": tuple(loss),
            "normalization": normalization,
            "q2_form": q2_form,
        },
    )


# -- hybrid --------------------------------------------------------------------


def hybrid_terms(
    stats: EmpiricalStats,
    prior_alpha: PriorDerivatives,
    loss_alpha,
    alpha: Sequence[int] | None = None,
    normalization: str = "moment",
    q2_form: str = "complete",
) -> ExpansionTerms:
    """Expansion terms ``(g_r, h_r)`` of the hybrid estimator.

    The alpha block (Bayes part) receives ``I^{11} rho_0^1`` plus a Bayes
    correction computed in the alpha-only sub-model with ``Sigma = I^{11}``;
    the beta block receives only ``I^{21} rho_0^1``. Terms are returned in
    the full coordinate order of the model.

    Parameters
    ----------
    alpha : sequence of int, optional
        Alpha coordinates; defaults to the partition stored with the Fisher blocks.
    """
    alpha = tuple(stats.fisher.alpha if alpha is None else alpha)
    d = stats.d
    if not alpha:
        raise ValueError("hybrid expansion needs a non-empty alpha block")
    beta = tuple(k for k in range(d) if k not in alpha)
    if prior_alpha.d != len(alpha):
        raise ValueError(f"alpha prior has dimension {prior_alpha.d}, expected {len(alpha)}")
    Iinv = stats.fisher.Iinv
    I11 = Iinv[np.ix_(alpha, alpha)]
    I21 = Iinv[np.ix_(beta, alpha)]
    sub = stats.restrict(alpha)

    H0 = _h_term(stats, [], 0, None)
    H1o = _h_term(stats, [H0], 1, None)
    rho0 = prior_alpha.gradient()
    q1 = bayes_q1(sub, loss_alpha, normalization)
    T1 = H1o.copy()
    T1[list(alpha)] += I11 @ rho0 + q1
    T1[list(beta)] += I21 @ rho0
    H2b = _h_term(stats, [H0, T1], 2, None)
    h0a = H0[list(alpha)]
    rho_h0 = np.zeros(len(alpha))
    for j in multi_indices(len(alpha), 1):
        rho_h0 += prior_alpha.rho[j] * hadamard_power_product(h0a, j)
    q2 = bayes_q2(sub, loss_alpha, q1, normalization, q2_form)
    T2 = H2b.copy()
    T2[list(alpha)] += I11 @ rho_h0 + q2
    T2[list(beta)] += I21 @ rho_h0
    return ExpansionTerms(
        "HYBRID",
        [H0, T1, T2],
        {"q1": q1, "q2": q2},
        {
            "stats": stats,
            "prior": prior_alpha,
            "loss": tuple(loss_alpha),
            "alpha": alpha,
            "normalization": normalization,
            "q2_form": q2_form,
        },
    )
