"""Monte-Carlo calibration of the CVaR concentration constants.

The CVaR tail bound ``2 D exp(-d n beta^2 eps^2)`` only fixes D and d up to
constants that depend on the arm family.  :func:`calibrate_subgauss` matches
d to the worst observed scaled mean-squared error of the empirical CVaR on
Gaussian arms; :func:`coverage` checks the resulting widths.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .instances import Gaussian
from .risk_core import RiskLevel, SubGaussianParams, _level, cvar_width_subgauss, tail_counts

__all__ = ["batch_cvar", "calibrate_subgauss", "coverage"]


def batch_cvar(samples: np.ndarray, level) -> np.ndarray:
    """Empirical CVaR of each row of ``samples``."""
    beta = _level(level).beta
    x = -np.sort(-np.asarray(samples, dtype=float), axis=1)
    n = x.shape[1]
    nb, lo, hi = tail_counts(n, beta)
    pivot = x[:, hi - 1]
    if lo == 0:
        return pivot
    return pivot + (x[:, :lo] - pivot[:, None]).sum(axis=1) / nb


def calibrate_subgauss(
    sigma: float,
    level,
    ns: Sequence[int] = (20, 50, 100, 200, 500, 1000),
    reps: int = 4000,
    seed: int = 0,
    d_big: float = 2.0,
) -> SubGaussianParams:
    """Level-specific ``(D, d)`` for sigma-sub-Gaussian arms.

    ``d = 1 / (2 beta^2 s2)`` where ``s2 = max_n n * E[(c_hat_n - c)^2]``
    over a standard Gaussian arm scaled by ``sigma``, so the width
    ``(1/beta) sqrt(log(2 D T^2) / (n d))`` is a Gaussian-tail bound with a
    variance proxy no smaller than the worst observed one.
    """
    lv = _level(level)
    rng = np.random.default_rng(seed)
    truth = Gaussian(0.0, 1.0).cvar(lv)
    s2 = 0.0
    for n in ns:
        est = batch_cvar(rng.standard_normal((reps, n)), lv)
        s2 = max(s2, n * float(np.mean((est - truth) ** 2)))
    d = 1.0 / (2.0 * lv.beta**2 * s2 * sigma**2)
    return SubGaussianParams(sigma, d_big, d)


def coverage(
    sg: SubGaussianParams,
    level,
    horizon: int,
    ns: Sequence[int] = (50, 200, 1000),
    trials: int = 10_000,
    seed: int = 1,
    mu: float = 0.0,
) -> dict:
    """Fraction of trials with ``|c_hat_n - c| <= width(n)`` for each n."""
    lv = _level(level)
    arm = Gaussian(mu, sg.sigma)
    truth = arm.cvar(lv)
    rng = np.random.default_rng(seed)
    out = {}
    for n in ns:
        est = batch_cvar(rng.normal(mu, sg.sigma, (trials, n)), lv)
        w = cvar_width_subgauss(n, lv, sg, horizon)
        out[n] = float(np.mean(np.abs(est - truth) <= w))
    return out
