"""Joint moments of centered Gaussians and the loss-weighted moment vectors.

``gaussian_moment(a, S)`` is ``E prod_r theta_r^{a_r}`` for ``theta ~ N(0, S)``,
evaluated by summing over perfect pairings (Isserlis / Wick).
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .index_algebra import MultiIndex

MAX_ORDER = 8


def check_covariance(S, d: int | None = None) -> np.ndarray:
    """Validate a covariance matrix (symmetric, PSD) and return it as an array."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"covariance must be square, got shape {S.shape}")
    if d is not None and S.shape[0] != d:
        raise ValueError(f"dimension mismatch: covariance {S.shape[0]} vs index {d}")
    scale = max(np.abs(S).max(), 1e-300)
    if np.abs(S - S.T).max() > 1e-12 * scale:
        raise ValueError("covariance is not symmetric")
    if np.linalg.eigvalsh((S + S.T) / 2).min() < -1e-10 * np.linalg.norm(S, 2):
        raise ValueError("covariance is not positive semidefinite")
    return S


def check_loss_exponents(a: Sequence[int]) -> MultiIndex:
    a = MultiIndex(a)
    if any(v < 2 or v % 2 for v in a):
        raise ValueError(f"loss exponents must be even and >= 2, got {tuple(a)}")
    return a


@lru_cache(maxsize=None)
def _pairings(symbols: tuple) -> tuple:
    """Perfect pairings of a symbol list, as tuples of (p, q) symbol pairs.

    Repeated symbols are kept distinct, so each pairing is counted once per
    position-level matching (this is what Isserlis' sum requires).
    """
    if not symbols:
        return ((),)
    first, rest = symbols[0], symbols[1:]
    out = []
    for k in range(len(rest)):
        pair = (first, rest[k])
        remaining = rest[:k] + rest[k + 1 :]
        for p in _pairings(remaining):
            out.append((pair,) + p)
    return tuple(out)


@lru_cache(maxsize=None)
def _pair_counts(a: tuple) -> tuple:
    """Collapse pairings of the expanded symbol list into (multiplicity, pairs)."""
    symbols = tuple(r for r, ar in enumerate(a) for _ in range(ar))
    counts: dict = {}
    for p in _pairings(symbols):
        key = tuple(sorted(tuple(sorted(q)) for q in p))
        counts[key] = counts.get(key, 0) + 1
    return tuple(sorted(counts.items()))


def gaussian_moment(a: Sequence[int], S) -> float:
    """Return ``E <theta^a>`` for ``theta ~ N(0, S)``.

    Odd total order gives exactly 0. Orders above 8 are refused (the number of
    pairings grows as ``(|a|-1)!!``).
    """
    a = MultiIndex(a)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape != (a.d, a.d):
        raise ValueError(f"dimension mismatch: covariance {S.shape} vs index length {a.d}")
    n = a.norm()
    if n > MAX_ORDER:
        raise ValueError(f"|a| = {n} exceeds the supported order {MAX_ORDER}")
    if n % 2:
        return 0.0
    total = 0.0
    for pairs, mult in _pair_counts(tuple(a)):
        term = float(mult)
        for p, q in pairs:
            term *= S[p, q]
        total += term
    return total


def _double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def sigma_diag(a: Sequence[int], S) -> np.ndarray:
    """Diagonal matrix of marginal moments ``(a_r - 1)!! * S_rr^{a_r/2}``."""
    a = check_loss_exponents(a)
    S = check_covariance(S, a.d)
    vals = [_double_factorial(ar - 1) * S[r, r] ** (ar // 2) for r, ar in enumerate(a)]
    return np.diag(vals)


def psi_vector(i: Sequence[int], a: Sequence[int], S) -> np.ndarray:
    """Loss-weighted moment vector ``Psi_i``, component k = ``sigma((a_k - 1) e_k + i)``."""
    i = MultiIndex(i)
    a = check_loss_exponents(a)
    if i.d != a.d:
        raise ValueError(f"dimension mismatch: index {i.d} vs exponents {a.d}")
    if i.norm() != 3:
        raise ValueError("psi_vector is defined for |i| = 3 only")
    S = check_covariance(S, a.d)
    return _psi(i, a, S)


def loss_moment_vector(i: Sequence[int], a: Sequence[int], S) -> np.ndarray:
    """``E theta^{a-1} <theta^i>`` for any index order (``psi_vector`` without the order guard)."""
    i = MultiIndex(i)
    a = check_loss_exponents(a)
    if i.d != a.d:
        raise ValueError(f"dimension mismatch: index {i.d} vs exponents {a.d}")
    S = check_covariance(S, a.d)
    return _psi(i, a, S)


def _psi(i: MultiIndex, a: MultiIndex, S: np.ndarray) -> np.ndarray:
    d = a.d
    return np.array(
        [gaussian_moment(i + MultiIndex.unit(d, k).scale(a[k] - 1), S) for k in range(d)]
    )


def psi_derivative(s: Sequence[int], k: int, a: Sequence[int], S) -> np.ndarray:
    """First derivative ``d Psi_s(u) / d u_k`` at ``u = 0``.

    With ``eta = theta + u`` the integral becomes ``E (eta - u)^{a-1} <eta^s>``,
    so component m is ``-(a_m - 1) [m == k] sigma((a_m - 2) e_m + s)``.
    """
    s = MultiIndex(s)
    a = check_loss_exponents(a)
    S = check_covariance(S, a.d)
    out = np.zeros(a.d)
    shift = MultiIndex.unit(a.d, k).scale(a[k] - 2)
    out[k] = -(a[k] - 1) * gaussian_moment(s + shift, S)
    return out


def psi_derivative_direct(s: Sequence[int], k: int, a: Sequence[int], S) -> np.ndarray:
    """Same quantity as :func:`psi_derivative`, by differentiating under the integral.

    Keeps ``theta`` fixed and differentiates ``<(theta+u)^s> exp(-(theta+u)' P (theta+u)/2)``
    in ``u_k``, with ``P = S^{-1}``. Used as an independent cross-check.
    """
    s = MultiIndex(s)
    a = check_loss_exponents(a)
    S = check_covariance(S, a.d)
    d = a.d
    P = np.linalg.inv(S)
    out = np.zeros(d)
    for m in range(d):
        base = MultiIndex.unit(d, m).scale(a[m] - 1) + s
        val = 0.0
        if s[k] > 0:
            val += s[k] * gaussian_moment(base - MultiIndex.unit(d, k), S)
        for r in range(d):
            if P[k, r] != 0.0:
                val -= P[k, r] * gaussian_moment(base + MultiIndex.unit(d, r), S)
        out[m] = val
    return out


def loss_normalizer(a: Sequence[int], S, kind: str = "moment") -> np.ndarray:
    """Matrix whose inverse scales the Bayes correction sums.

    ``kind="moment"`` gives ``{sigma(a)} S^{-1}``; ``kind="stein"`` gives the
    exact ``-[d Psi_0 / d u]`` which is ``diag((a_k - 1) sigma(a_k - 2))``.
    The two agree when ``S`` is diagonal.
    """
    a = check_loss_exponents(a)
    S = check_covariance(S, a.d)
    if kind == "moment":
        return sigma_diag(a, S) @ np.linalg.inv(S)
    if kind == "stein":
        return np.diag(
            [(ak - 1) * _double_factorial(ak - 3) * S[k, k] ** ((ak - 2) // 2) for k, ak in enumerate(a)]
        )
    raise ValueError(f"unknown normalization {kind!r}")
