"""Expected asymptotic bias of the MLE, Bayes and hybrid estimators.

The expected asymptotic bias (EAB) of an estimator is the mean of its
second expansion term, ``E T_1``. It ranks estimators at second order: a
smaller norm is preferred.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expansion import PriorDerivatives, bayes_q1
from .index_algebra import MultiIndex, multi_indices
from .model_kit.base import FisherBlocks, Model, expectation_table, expected_stats, fisher_information

CONVENTIONS = ("score", "inverse")
NORMS = ("euclidean", "max")
TIE_TOL = 1e-9


def d_matrix(model: Model, theta0, j: int) -> np.ndarray:
    """``D_j[k, m] = E[l_{e_j + e_k} l_{e_m}]`` at ``theta0``."""
    theta0 = model.space.check(theta0)
    d = model.space.d
    if not 0 <= j < d:
        raise ValueError(f"coordinate {j} outside 0..{d - 1}")
    ej = MultiIndex.unit(d, j)
    D = np.empty((d, d))
    for k in range(d):
        for m in range(d):
            D[k, m] = model.expect_product(theta0, ej + MultiIndex.unit(d, k), MultiIndex.unit(d, m))
    return D


def _expect_vector(table: dict, i: MultiIndex) -> np.ndarray:
    d = i.d
    return np.array([table[i + MultiIndex.unit(d, k)] for k in range(d)])


def eab_mle(
    model: Model,
    theta0,
    convention: str = "score",
    d_matrices: Sequence[np.ndarray] | None = None,
    fisher: FisherBlocks | None = None,
) -> np.ndarray:
    """``E H_1 = I^{-1}(sum_j D_j I^{-1} e_j + sum_{|i|=2} E_i E<H_0^i> / i!)``.

    Parameters
    ----------
    convention : {"score", "inverse"}
        Covariance used for ``E H_0 H_0'``. ``"score"`` takes the score
        covariance ``I`` so ``E H_0 H_0' = I^{-1}``; ``"inverse"`` takes a
        score covariance of ``I^{-1}``, giving ``I^{-3}``.
    d_matrices : sequence of arrays, optional
        Override for the ``D_j``.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; choose from {CONVENTIONS}")
    theta0 = model.space.check(theta0)
    d = model.space.d
    f = fisher if fisher is not None else fisher_information(model, theta0)
    Iinv = f.Iinv
    Ds = list(d_matrices) if d_matrices is not None else [d_matrix(model, theta0, j) for j in range(d)]
    if len(Ds) != d:
        raise ValueError(f"need {d} D matrices, got {len(Ds)}")
    table = expectation_table(model, theta0, 3)
    cov_h0 = Iinv if convention == "score" else Iinv @ Iinv @ Iinv
    acc = sum(np.asarray(Ds[j]) @ Iinv[:, j] for j in range(d))
    for i in multi_indices(d, 2):
        a = [r for r in range(d) for _ in range(i[r])]
        acc = acc + _expect_vector(table, i) * cov_h0[a[0], a[1]] / i.factorial()
    return Iinv @ acc


def eab_bayes(
    model: Model,
    theta0,
    prior: PriorDerivatives,
    loss,
    convention: str = "score",
    normalization: str = "moment",
    d_matrices=None,
) -> np.ndarray:
    """``E G_1 = E H_1 + I^{-1} rho_0 + M_{0,1}``."""
    theta0 = model.space.check(theta0)
    f = fisher_information(model, theta0)
    if prior.d != model.space.d:
        raise ValueError(f"prior dimension {prior.d} does not match {model.space.d}")
    base = eab_mle(model, theta0, convention, d_matrices, f)
    m01 = bayes_q1(expected_stats(model, theta0, f), loss, normalization)
    return base + f.Iinv @ prior.gradient() + m01


def eab_hybrid(
    model: Model,
    theta0,
    prior_alpha: PriorDerivatives,
    loss_alpha,
    alpha: Sequence[int] | None = None,
    convention: str = "score",
    normalization: str = "moment",
    d_matrices=None,
) -> np.ndarray:
    """``E (g_1, h_1) = E H_1 + (I^{11} rho_0^1 + q_1; I^{21} rho_0^1)`` in model coordinates."""
    theta0 = model.space.check(theta0)
    alpha = tuple(model.space.alpha if alpha is None else alpha)
    if not alpha:
        raise ValueError("hybrid bias needs a non-empty alpha block")
    d = model.space.d
    beta = [k for k in range(d) if k not in alpha]
    if prior_alpha.d != len(alpha):
        raise ValueError(f"alpha prior has dimension {prior_alpha.d}, expected {len(alpha)}")
    f = fisher_information(model, theta0)
    base = eab_mle(model, theta0, convention, d_matrices, f)
    sub = expected_stats(model, theta0, f).restrict(alpha)
    q1 = bayes_q1(sub, loss_alpha, normalization)
    rho = prior_alpha.gradient()
    out = base.copy()
    out[list(alpha)] += f.Iinv[np.ix_(alpha, alpha)] @ rho + q1
    out[beta] += f.Iinv[np.ix_(beta, alpha)] @ rho
    return out


# -- limit-simulation oracle ---------------------------------------------------


@dataclass
class OracleResult:
    mean: np.ndarray
    se: np.ndarray
    draws: int

    def agrees(self, value, k: float = 4.0) -> bool:
        return bool(np.all(np.abs(np.asarray(value) - self.mean) <= k * self.se + 1e-12))


def limit_oracle(model: Model, theta0, draws: int = 1_000_000, seed: int = 0, chunk: int = 200_000) -> OracleResult:
    """Monte Carlo mean of ``H_1`` with ``(Delta_0, Delta_{e_j})`` drawn from their Gaussian limit.

    The joint covariance ``E[l_u l_w] - E_u E_w`` over first and second
    derivative indices comes from the model's expectation oracle. Chunks use
    seeds spawned from ``seed`` so the result does not depend on ``chunk``
    scheduling beyond the fixed chunk size.
    """
    theta0 = model.space.check(theta0)
    d = model.space.d
    f = fisher_information(model, theta0)
    Iinv = f.Iinv
    idx = list(multi_indices(d, 1)) + list(multi_indices(d, 2))
    pos = {i: p for p, i in enumerate(idx)}
    table = expectation_table(model, theta0, 3)
    m = len(idx)
    C = np.empty((m, m))
    for a in range(m):
        for b in range(a, m):
            C[a, b] = C[b, a] = model.expect_product(theta0, idx[a], idx[b]) - table[idx[a]] * table[idx[b]]
    w, V = np.linalg.eigh(C)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    E2 = {i: _expect_vector(table, i) for i in multi_indices(d, 2)}
    children = np.random.SeedSequence(seed).spawn(-(-draws // chunk))
    total = np.zeros(d)
    total_sq = np.zeros(d)
    done = 0
    for child in children:
        k = min(chunk, draws - done)
        z = np.random.default_rng(child).standard_normal((k, m)) @ root.T
        delta0 = z[:, [pos[MultiIndex.unit(d, r)] for r in range(d)]]
        H0 = delta0 @ Iinv.T
        acc = np.zeros((k, d))
        for j in range(d):
            ej = MultiIndex.unit(d, j)
            dj = z[:, [pos[ej + MultiIndex.unit(d, r)] for r in range(d)]]
            acc += dj * H0[:, [j]]
        for i, e in E2.items():
            a = [r for r in range(d) for _ in range(i[r])]
            acc += np.outer(H0[:, a[0]] * H0[:, a[1]] / i.factorial(), e)
        H1 = acc @ Iinv.T
        total += H1.sum(axis=0)
        total_sq += (H1**2).sum(axis=0)
        done += k
    mean = total / draws
    var = total_sq / draws - mean**2
    return OracleResult(mean, np.sqrt(var * draws / (draws - 1) / draws), draws)


# -- comparison ------------------------------------------------------------------


@dataclass
class Verdict:
    """Ranking of estimators by the norm of their EAB vectors."""

    preferred: str
    norms: dict
    ranking: list
    margin: float
    norm: str = "euclidean"

    @property
    def is_tie(self) -> bool:
        return self.preferred == "tie"


def _norm(v, kind: str) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.linalg.norm(v) if kind == "euclidean" else np.max(np.abs(v)))


def compare(reports: dict, norm: str = "euclidean", tol: float = TIE_TOL) -> Verdict:
    """Rank EAB vectors; the smallest norm is preferred, equal leaders tie.

    Parameters
    ----------
    reports : dict
        Estimator name to EAB vector (at least two entries).
    """
    if norm not in NORMS:
        raise ValueError(f"unknown norm {norm!r}; choose from {NORMS}")
    if len(reports) < 2:
        raise ValueError("need at least two EAB vectors to compare")
    norms = {k: _norm(v, norm) for k, v in reports.items()}
    ranking = sorted(norms, key=lambda k: (norms[k], k))
    margin = norms[ranking[1]] - norms[ranking[0]]
    preferred = "tie" if margin <= tol else ranking[0]
    return Verdict(preferred, norms, ranking, margin, norm)


@dataclass
class EabReport:
    """EAB vectors of the available estimators, their norms and the verdict."""

    eab_mle: np.ndarray
    eab_bayes: np.ndarray | None = None
    eab_hybrid: np.ndarray | None = None
    norm: str = "euclidean"
    oracle: OracleResult | None = None
    reference: dict = field(default_factory=dict)
    verdict: Verdict | None = field(init=False)

    def __post_init__(self):
        self.verdict = compare(self.vectors(), self.norm) if len(self.vectors()) >= 2 else None

    def vectors(self) -> dict:
        out = {"mle": self.eab_mle}
        if self.eab_bayes is not None:
            out["bayes"] = self.eab_bayes
        if self.eab_hybrid is not None:
            out["hybrid"] = self.eab_hybrid
        return out

    @property
    def norms(self) -> dict:
        return {k: _norm(v, self.norm) for k, v in self.vectors().items()}

    @property
    def oracle_agrees(self) -> bool | None:
        """Whether the oracle mean matches ``eab_mle`` within 4 standard errors."""
        return None if self.oracle is None else self.oracle.agrees(self.eab_mle)

    def discrepancies(self, rtol: float = 1e-8) -> list:
        """Reference values that differ from the implemented formula, with both values."""
        out = []
        vectors = self.vectors()
        for name, ref in self.reference.items():
            if name in vectors and not np.allclose(vectors[name], ref, rtol=rtol, atol=rtol):
                out.append({"estimator": name, "formula": np.asarray(vectors[name]).tolist(), "reference": np.asarray(ref).tolist()})
        if self.oracle is not None and not self.oracle_agrees:
            out.append({"estimator": "mle", "formula": self.eab_mle.tolist(), "oracle": self.oracle.mean.tolist()})
        return out

    def to_dict(self) -> dict:
        out = {k: np.asarray(v).tolist() for k, v in self.vectors().items()}
        out["norms"] = self.norms
        out["norm"] = self.norm
        out["verdict"] = None if self.verdict is None else self.verdict.preferred
        if self.verdict is not None:
            out["margin"] = self.verdict.margin
        if self.oracle is not None:
            out["oracle"] = {"mean": self.oracle.mean.tolist(), "se": self.oracle.se.tolist(), "draws": self.oracle.draws}
            out["oracle_agrees"] = self.oracle_agrees
        if self.reference:
            out["reference"] = {k: np.asarray(v).tolist() for k, v in self.reference.items()}
            out["discrepancies"] = self.discrepancies()
        return out
