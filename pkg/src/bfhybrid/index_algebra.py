"""Multi-index arithmetic and enumeration of the index sets used by the expansions.

A multi-index is a nonnegative integer vector ``i = (i_1, ..., i_d)`` with
``|i| = sum(i)`` and ``i! = prod(i_j!)``. The set ``(r, s, l, i)`` collects every
assignment ``(i_r, ..., i_s)`` of multi-indices with ``sum_v v * i_v = l`` and
``sum_v i_v = i``.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import product
from math import factorial
from typing import Iterable, Sequence

import numpy as np

# only |i| <= 6 is ever needed; anything past int64 is a bug upstream
_INT64_MAX = 2**63 - 1


class MultiIndex(tuple):
    """Immutable nonnegative integer vector.

    Supports componentwise ``+``; ``-`` is partial and raises when any entry
    would become negative.
    """

    def __new__(cls, entries: Iterable[int]):
        vals = tuple(int(e) for e in entries)
        if len(vals) == 0:
            raise ValueError("multi-index must have length >= 1")
        if any(v < 0 for v in vals):
            raise ValueError(f"multi-index entries must be >= 0, got {vals}")
        return super().__new__(cls, vals)

    @classmethod
    def zeros(cls, d: int) -> "MultiIndex":
        return cls((0,) * d)

    @classmethod
    def unit(cls, d: int, j: int) -> "MultiIndex":
        """The unit vector ``e_j`` (0-based ``j``)."""
        v = [0] * d
        v[j] = 1
        return cls(v)

    @property
    def d(self) -> int:
        return len(self)

    def norm(self) -> int:
        return mi_norm(self)

    def factorial(self) -> int:
        return mi_factorial(self)

    def __add__(self, other):
        other = tuple(other)
        if len(other) != len(self):
            raise ValueError("multi-index length mismatch")
        return MultiIndex(a + b for a, b in zip(self, other))

    def __sub__(self, other):
        other = tuple(other)
        if len(other) != len(self):
            raise ValueError("multi-index length mismatch")
        diff = [a - b for a, b in zip(self, other)]
        if any(v < 0 for v in diff):
            raise ValueError(f"{tuple(self)} - {other} is not a multi-index")
        return MultiIndex(diff)

    def scale(self, c: int) -> "MultiIndex":
        return MultiIndex(c * a for a in self)

    def geq(self, other) -> bool:
        """Componentwise ``self >= other``."""
        return all(a >= b for a, b in zip(self, other))

    def __repr__(self):
        return f"MultiIndex({tuple(self)})"


# (i_r, ..., i_s) as a plain tuple of MultiIndex
IndexAssignment = tuple


def mi_norm(i: Sequence[int]) -> int:
    return int(sum(i))


def mi_factorial(i: Sequence[int]) -> int:
    out = 1
    for v in i:
        out *= factorial(int(v))
    if out > _INT64_MAX:
        raise OverflowError(f"factorial of {tuple(i)} exceeds the int64 range")
    return out


def hadamard_power_product(v, i: Sequence[int]) -> float:
    """Return ``<v^i> = prod_j v_j ** i_j`` with ``0 ** 0 = 1``."""
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != len(i):
        raise ValueError(f"length mismatch: vector {v.shape[0]} vs index {len(i)}")
    out = 1.0
    for vj, ij in zip(v, i):
        if ij:
            out *= vj**ij
    return float(out)


@lru_cache(maxsize=None)
def _compositions(total: int, d: int) -> tuple:
    """All nonnegative integer d-vectors summing to ``total``, lexicographic."""
    if d == 1:
        return ((total,),)
    out = []
    for first in range(total + 1):
        for rest in _compositions(total - first, d - 1):
            out.append((first,) + rest)
    return tuple(out)


def multi_indices(d: int, order: int) -> list:
    """Every MultiIndex of length ``d`` with ``|i| == order``, lexicographic."""
    if order < 0:
        return []
    return [MultiIndex(c) for c in _compositions(order, d)]


def _bounded_vectors(bound: Sequence[int]):
    """All integer vectors ``0 <= x <= bound``, lexicographic."""
    return product(*(range(b + 1) for b in bound))


def enumerate_rsli(r: int, s: int, l: Sequence[int], i: Sequence[int]) -> list:
    """Enumerate the index set ``(r, s, l, i)``.

    Parameters
    ----------
    r, s : int
        First and last position, ``0 <= r <= s``.
    l, i : sequence of int
        Target weighted sum and plain sum, both of length ``d``.

    Returns
    -------
    list of tuple of MultiIndex
        Each entry is ``(i_r, ..., i_s)``. Order is lexicographic on the
        concatenated entries.
    """
    if not 0 <= r <= s:
        raise ValueError(f"need 0 <= r <= s, got r={r}, s={s}")
    l = tuple(int(x) for x in l)
    i = tuple(int(x) for x in i)
    if len(l) != len(i):
        raise ValueError("l and i must have the same length")
    return [tuple(MultiIndex(t) for t in a) for a in _rsli(r, s, l, i)]


@lru_cache(maxsize=4096)
def _rsli(r: int, s: int, l: tuple, i: tuple) -> tuple:
    # positions r..s; choose i_r, then recurse on r+1..s with reduced targets.
    # i_r is bounded by i componentwise, so the search is finite.
    if any(x < 0 for x in l) or any(x < 0 for x in i):
        return ()
    if r == s:
        cand = i
        if all(r * c == lv for c, lv in zip(cand, l)):
            return ((cand,),)
        return ()
    out = []
    for head in _bounded_vectors(i):
        rem_i = tuple(a - b for a, b in zip(i, head))
        rem_l = tuple(a - r * b for a, b in zip(l, head))
        if any(x < 0 for x in rem_l):
            continue
        for tail in _rsli(r + 1, s, rem_l, rem_i):
            out.append((head,) + tail)
    return tuple(out)


def enumerate_i1(a: int, r: int, m: int, l: int) -> list:
    """Scalar assignments ``(i_a, ..., i_r)`` with ``sum v i_v = m`` and ``sum i_v = l``."""
    if a > r:
        raise ValueError(f"need a <= r, got a={a}, r={r}")
    if m < 0 or l < 0:
        raise ValueError("m and l must be nonnegative")
    return [tuple(x[0] for x in t) for t in _rsli(a, r, (m,), (l,))]
