"""Adaptive random-walk Metropolis with effective-sample-size diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import McmcConfig

ACCEPT_RANGE = (0.1, 0.6)
ADAPT_BATCH = 100


@dataclass
class McmcResult:
    samples: np.ndarray
    acceptance: float
    ess: np.ndarray
    scale: float

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    @property
    def mcse(self) -> np.ndarray:
        """Monte Carlo standard error of the posterior mean."""
        return self.samples.std(axis=0, ddof=1) / np.sqrt(self.ess)

    @property
    def flagged(self) -> bool:
        return not ACCEPT_RANGE[0] <= self.acceptance <= ACCEPT_RANGE[1]

    def diagnostics(self) -> dict:
        return {
            "acceptance": self.acceptance,
            "ess": self.ess.tolist(),
            "mcse": self.mcse.tolist(),
            "proposal_scale": self.scale,
            "acceptance_flagged": self.flagged,
        }


def effective_sample_size(chain) -> np.ndarray:
    """ESS per column by Geyer's initial positive sequence on FFT autocorrelations."""
    x = np.asarray(chain, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        z = x[:, j] - x[:, j].mean()
        var = z @ z / n
        if var == 0:
            out[j] = n
            continue
        m = 1 << (2 * n - 1).bit_length()
        f = np.fft.rfft(z, m)
        acf = np.fft.irfft(f * np.conj(f), m)[:n] / (n * var)
        tau = -1.0
        for k in range(0, n - 1, 2):
            pair = acf[k] + acf[k + 1]
            if pair <= 0:
                break
            tau += 2 * pair
        out[j] = n / max(tau, 1.0 / n)
    return np.minimum(out, n)


def rwm(
    logpost: Callable,
    x0,
    config: McmcConfig,
    rng: np.random.Generator,
    cov=None,
) -> McmcResult:
    """Random-walk Metropolis with a Gaussian proposal ``scale^2 * cov``.

    During burn-in the log scale is nudged every batch toward the target
    acceptance rate and, halfway through, ``cov`` is replaced by the burn-in
    sample covariance when that is positive definite, restarting the scale
    at ``2.38 / sqrt(d)``. Both are frozen
    afterwards, so the retained chain is a valid Metropolis chain.
    """
    x = np.asarray(x0, dtype=float).copy()
    d = len(x)
    cov = np.eye(d) * 0.01 * (1.0 + np.abs(x)) ** 2 if cov is None else np.atleast_2d(np.asarray(cov, dtype=float))
    chol = _safe_cholesky(cov)
    log_s = np.log(config.scale if config.scale is not None else 2.38 / np.sqrt(d))
    lp = logpost(x)
    if not np.isfinite(lp):
        raise ValueError(f"log posterior is not finite at the starting point {x.tolist()}")
    total = config.burn_in + config.length
    kept = np.empty((config.length, d))
    burn = np.empty((config.burn_in, d))
    accepted = 0
    batch_acc = 0
    batches = 0
    z = rng.standard_normal((total, d))
    log_u = np.log(rng.uniform(size=total))
    for t in range(total):
        prop = x + np.exp(log_s) * (chol @ z[t])
        lq = logpost(prop)
        if np.isfinite(lq) and log_u[t] < lq - lp:
            x, lp = prop, lq
            if t >= config.burn_in:
                accepted += 1
            else:
                batch_acc += 1
        if t < config.burn_in:
            burn[t] = x
            if (t + 1) % ADAPT_BATCH == 0:
                batches += 1
                log_s += (batch_acc / ADAPT_BATCH - config.target) / np.sqrt(batches)
                batch_acc = 0
            if t + 1 == config.burn_in // 2 and t + 1 >= 20 * d:
                emp = np.cov(burn[: t + 1].T).reshape(d, d)
                try:
                    chol = np.linalg.cholesky(emp + 1e-12 * np.eye(d) * np.trace(emp) / d)
                    log_s = np.log(2.38 / np.sqrt(d))
                    batches = 0
                except np.linalg.LinAlgError:
                    pass
        else:
            kept[t - config.burn_in] = x
    return McmcResult(kept, accepted / config.length, effective_sample_size(kept), float(np.exp(log_s)))


def _safe_cholesky(cov):
    d = cov.shape[0]
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        diag = np.abs(np.diag(cov))
        return np.diag(np.sqrt(np.where(diag > 0, diag, 1e-4)))
