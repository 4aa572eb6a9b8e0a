import numpy as np
import pytest


def random_spd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T / d + 0.5 * np.eye(d))


def gh_moment(a, S, nodes=40):
    """Tensorized Gauss-Hermite estimate of E <theta^a>, theta ~ N(0, S)."""
    d = len(a)
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    L = np.linalg.cholesky(S)
    grids = np.meshgrid(*([x] * d), indexing="ij")
    Z = np.stack([g.ravel() for g in grids])
    W = np.ones(Z.shape[1])
    for g in np.meshgrid(*([w] * d), indexing="ij"):
        W = W * g.ravel()
    T = L @ Z
    vals = np.ones(Z.shape[1])
    for r, ar in enumerate(a):
        vals = vals * T[r] ** ar
    return float(np.sum(W * vals))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
