"""Second-order expansion-matching priors.

A prior matches the MLE to second order when the Bayes correction of the
second expansion term vanishes, ``I^{-1} rho_0 + Q_1 = 0``. Solving for the
log-prior gradient gives the drift field ``b(theta) = -I(theta) Q_1(theta)``.
A prior exists when ``b`` is curl free; its log density is then the line
integral of ``b`` from a reference point.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .expansion import PriorDerivatives, bayes_q1
from .model_kit.base import Model, expected_stats, fisher_information

CURL_TOL = 1e-4
QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-10


@dataclass
class CurlReport:
    """Largest asymmetry ``|J_ij - J_ji|`` of the drift Jacobian over a grid."""

    symmetric: bool
    max_violation: float
    worst_point: np.ndarray | None
    tol: float
    points: int


@dataclass
class DriftField:
    """Log-prior gradient field on a box.

    Parameters
    ----------
    b : callable
        ``theta -> gradient of log pi`` (length ``d``).
    lower, upper : arrays
        Domain box; the field is finite on its interior.
    names : tuple of str
        Coordinate names.
    """

    b: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    names: tuple = ()
    curl: CurlReport | None = field(default=None, repr=False)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not self.names:
            self.names = tuple(f"theta{k + 1}" for k in range(self.d))

    @property
    def d(self) -> int:
        return len(self.lower)

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.d,):
            raise ValueError(f"expected a point of length {self.d}, got shape {theta.shape}")
        return np.asarray(self.b(theta), dtype=float)

    def inside(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta > self.lower) and np.all(theta < self.upper))

    def center(self) -> np.ndarray:
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("the domain box is unbounded; supply a reference point")
        return (self.lower + self.upper) / 2


def drift_field(
    model: Model,
    loss,
    normalization: str = "moment",
    alpha: Sequence[int] | None = None,
    beta1=None,
    lower=None,
    upper=None,
) -> DriftField:
    """Matching-prior drift ``b = -{sigma(a)}^{-1} sum_{|i|=3} E_i Psi_i / i!``.

    Parameters
    ----------
    model : Model
    loss : sequence of even int
        Loss exponents, one per coordinate of the field.
    alpha : sequence of int, optional
        Coordinates carrying the prior. When given, the field is a function
        of those coordinates with the others held at ``beta1``, and
        ``Psi``, ``sigma`` use the ``alpha`` block of ``I^{-1}``.
    beta1 : array, optional
        Values of the remaining coordinates (required when they exist).
    lower, upper : arrays, optional
        Domain box; defaults to the parameter bounds.
    """
    space = model.space
    coords = tuple(range(space.d)) if alpha is None else tuple(alpha)
    if not coords:
        raise ValueError("the field needs at least one coordinate")
    rest = tuple(k for k in range(space.d) if k not in coords)
    beta1 = np.asarray([] if beta1 is None else beta1, dtype=float).reshape(-1)
    if len(beta1) != len(rest):
        raise ValueError(f"need {len(rest)} fixed values for coordinates {rest}, got {len(beta1)}")

    def full(point):
        theta = np.empty(space.d)
        theta[list(coords)] = point
        theta[list(rest)] = beta1
        return theta

    def b(point):
        theta = full(point)
        stats = expected_stats(model, theta)
        if rest:
            stats = stats.restrict(coords)
        q1 = bayes_q1(stats, loss, normalization)
        return -np.linalg.solve(stats.fisher.Iinv, q1)

    lo = np.asarray(space.lower, dtype=float)[list(coords)] if lower is None else lower
    hi = np.asarray(space.upper, dtype=float)[list(coords)] if upper is None else upper
    return DriftField(b, lo, hi, tuple(space.names[k] for k in coords))


def jacobian(b: DriftField, theta, step: float | None = None) -> np.ndarray:
    """Central-difference Jacobian ``J[i, j] = d b_i / d theta_j``."""
    theta = np.asarray(theta, dtype=float)
    h0 = np.finfo(float).eps ** (1 / 3) if step is None else step
    J = np.empty((b.d, b.d))
    for j in range(b.d):
        h = h0 * max(1.0, abs(theta[j]))
        e = np.zeros(b.d)
        e[j] = h
        J[:, j] = (b(theta + e) - b(theta - e)) / (2 * h)
    return J


def curl_check(b: DriftField, grid, tol: float = CURL_TOL, step: float | None = None) -> CurlReport:
    """Check ``d b_i / d theta_j = d b_j / d theta_i`` on every grid point.

    The report is also stored on ``b`` so that integration can rely on it.
    """
    grid = [np.asarray(p, dtype=float) for p in grid]
    worst, where = 0.0, None
    if b.d > 1:
        for p in grid:
            J = jacobian(b, p, step)
            v = float(np.max(np.abs(J - J.T)))
            if v > worst or where is None:
                worst, where = v, p
    report = CurlReport(bool(worst <= tol), worst, where, tol, len(grid))
    b.curl = report
    return report


def _leg(b: DriftField, start: np.ndarray, k: int, end: float) -> float:
    def f(t):
        p = start.copy()
        p[k] = t
        return b(p)[k]

    val, err, info, *msg = integrate.quad(f, start[k], end, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200, full_output=1)
    if msg:
        raise RuntimeError(f"quadrature along coordinate {k} did not converge: {msg[0]}")
    return val


def integrate_log_prior(b: DriftField, theta_star, theta, order: Sequence[int] | None = None) -> float:
    """``log pi(theta) - log pi(theta_star)`` along the axis-ordered polyline.

    Parameters
    ----------
    order : sequence of int, optional
        Order in which coordinates are moved; defaults to ``0, 1, ..., d-1``.

    Raises
    ------
    RuntimeError
        If ``d > 1`` and no curl check has been run on ``b``, or a leg fails
        to converge.
    ValueError
        If the curl check failed or the path leaves the domain.
    """
    if b.d > 1:
        if b.curl is None:
            raise RuntimeError("run curl_check on the field before integrating")
        if not b.curl.symmetric:
            raise ValueError(f"field is not curl free (max violation {b.curl.max_violation:.3g})")
    start = np.asarray(theta_star, dtype=float).copy()
    theta = np.asarray(theta, dtype=float)
    order = tuple(range(b.d)) if order is None else tuple(order)
    if sorted(order) != list(range(b.d)):
        raise ValueError(f"order must be a permutation of 0..{b.d - 1}")
    total = 0.0
    for k in order:
        corner = start.copy()
        corner[k] = theta[k]
        if not (b.inside(start) and b.inside(corner)):
            raise ValueError("integration path leaves the domain")
        if theta[k] != start[k]:
            total += _leg(b, start, k, theta[k])
        start = corner
    return total


@dataclass
class PriorSolution:
    """Constant-free log prior normalized to zero at ``reference_point``."""

    field: DriftField
    reference_point: np.ndarray
    curl_report: CurlReport | None
    order: tuple | None = None

    def logpi(self, theta) -> float:
        return integrate_log_prior(self.field, self.reference_point, theta, self.order)

    def grid_rows(self, grid) -> list:
        return [(*np.asarray(p, dtype=float).tolist(), self.logpi(p)) for p in grid]

    def to_csv(self, grid, path=None) -> str:
        """CSV with columns ``theta_1..theta_d, logpi``; written to ``path`` when given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*self.field.names, "logpi"])
        for row in self.grid_rows(grid):
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def solve_prior(b: DriftField, theta_star=None, grid=None, tol: float = CURL_TOL, order=None) -> PriorSolution:
    """Curl-check ``b`` on ``grid`` (default: a 5-per-axis box grid) and return the integrated prior."""
    theta_star = b.center() if theta_star is None else np.asarray(theta_star, dtype=float)
    if grid is None:
        grid = box_grid(b.lower, b.upper, 5)
    report = curl_check(b, grid, tol)
    return PriorSolution(b, theta_star, report, None if order is None else tuple(order))


def box_grid(lower, upper, num: int, margin: float = 0.1) -> list:
    """Tensor grid of ``num`` points per axis, kept ``margin`` of the width inside the box."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("box_grid needs a bounded box")
    width = upper - lower
    axes = [np.linspace(lo + margin * w, hi - margin * w, num) for lo, hi, w in zip(lower, upper, width)]
    return [np.array(p) for p in itertools.product(*axes)]


def jeffreys_log_prior(model: Model, theta, coords: Sequence[int] | None = None) -> float:
    """``(1/2) log det I(theta)``, or of the ``coords`` block of ``I``."""
    f = fisher_information(model, theta)
    I = f.I if coords is None else f.I[np.ix_(coords, coords)]
    sign, logdet = np.linalg.slogdet(I)
    if sign <= 0:
        raise ValueError("Fisher information is not positive definite")
    return 0.5 * logdet


@dataclass
class PremiseReport:
    """Check of ``E_{3 e_j} = -d I_jj / d theta_j`` on a grid.

    ``ratio`` is ``E_{3e_j} / (-d I_jj / d theta_j)`` at the worst point.
    ``jeffreys_gap`` is only computed when the premise holds.
    """

    holds: bool
    max_rel_gap: float
    ratio: float
    jeffreys_gap: float | None
    jeffreys_agrees: bool | None


def example1_premise_check(
    model: Model, grid, rtol: float = 1e-6, step: float = 1e-5, jeffreys_tol: float = 1e-6
) -> PremiseReport:
    """Check the third-derivative identity behind the Jeffreys coincidence.

    When ``E l_{3 e_j} = -d I_jj / d theta_j`` for every ``j`` (diagonal
    Fisher, ``I_jj`` depending on ``theta_j`` alone), the quadratic-loss
    matching prior is Jeffreys' prior. When the identity holds on the grid,
    the integrated matching prior is compared with ``jeffreys_log_prior``
    relative to the first grid point.
    """
    grid = [model.space.check(p) for p in grid]
    d = model.space.d
    worst, ratio = 0.0, 1.0
    for p in grid:
        for j in range(d):
            lhs = model.expect(p, [3 if k == j else 0 for k in range(d)])
            h = step * max(1.0, abs(p[j]))
            up, dn = p.copy(), p.copy()
            up[j] += h
            dn[j] -= h
            rhs = -(fisher_information(model, up).I[j, j] - fisher_information(model, dn).I[j, j]) / (2 * h)
            scale = max(abs(lhs), abs(rhs))
            gap = 0.0 if scale < 1e-300 else abs(lhs - rhs) / scale
            if gap >= worst:
                worst = gap
                ratio = lhs / rhs if rhs != 0 else (1.0 if lhs == 0 else np.inf)
    holds = bool(worst <= max(rtol, 10 * step**2))
    jgap, jok = None, None
    if holds:
        b = drift_field(model, [2] * d)
        curl_check(b, grid)
        ref = grid[0]
        j0 = jeffreys_log_prior(model, ref)
        jgap = float(max(abs(integrate_log_prior(b, ref, p) - (jeffreys_log_prior(model, p) - j0)) for p in grid))
        jok = bool(jgap <= jeffreys_tol)
    return PremiseReport(holds, float(worst), float(ratio), jgap, jok)


def hybrid_matching_residual(
    model: Model,
    prior_alpha: PriorDerivatives | np.ndarray,
    alpha_value,
    beta1,
    loss_alpha,
    coords: Sequence[int] | None = None,
    normalization: str = "moment",
) -> tuple:
    """Residuals of the hybrid second-order matching system at ``(alpha, beta1)``.

    Returns ``(r1, r2)`` with ``r1 = d log pi / d alpha - b_alpha`` (the
    ``alpha``-block matching equation) and ``r2 = I^{21} d log pi / d alpha``
    (the ``beta``-block coupling, zero only when the blocks decouple or the
    prior is flat).
    """
    coords = tuple(model.space.alpha if coords is None else coords)
    rest = tuple(k for k in range(model.space.d) if k not in coords)
    grad = prior_alpha.gradient() if isinstance(prior_alpha, PriorDerivatives) else np.asarray(prior_alpha, dtype=float)
    if grad.shape != (len(coords),):
        raise ValueError(f"prior gradient must have length {len(coords)}")
    b = drift_field(model, loss_alpha, normalization, coords, beta1)
    alpha_value = np.asarray(alpha_value, dtype=float).reshape(-1)
    r1 = grad - b(alpha_value)
    theta = np.empty(model.space.d)
    theta[list(coords)] = alpha_value
    theta[list(rest)] = np.asarray([] if beta1 is None else beta1, dtype=float)
    Iinv = fisher_information(model, theta).Iinv
    r2 = Iinv[np.ix_(rest, coords)] @ grad
    return r1, r2
