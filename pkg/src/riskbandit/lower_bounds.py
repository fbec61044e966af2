"""KL-based instance-dependent lower bounds for Gaussian arm classes.

For a non-optimal arm the asymptotic lower bound on its expected pulls is
``log(T) / eta`` where eta is the smallest KL divergence needed to perturb
the arm into one that would be optimal.  Infima over open regions are taken
at the closed boundary; KL is continuous in the Gaussian parameters, so the
value is the limit and the reported minimizer sits on the boundary.

KL is always ``KL(original, perturbed)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import optimize, stats

from .instances import Gaussian, InstanceOracle, InstanceSpec
from .risk_core import RiskLevel, _level

__all__ = [
    "GaussianClass",
    "EtaResult",
    "kl_gaussian",
    "cvar_multiplier",
    "eta_feasible",
    "eta_infeasible",
    "eta_cvar_minimization",
    "theorem4_lower_bound",
    "instance_etas",
]


def kl_gaussian(mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    """KL(N(mu1, sigma1^2) || N(mu2, sigma2^2))."""
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError("standard deviations must be positive")
    return (
        math.log(sigma2 / sigma1)
        + (sigma1**2 + (mu1 - mu2) ** 2) / (2.0 * sigma2**2)
        - 0.5
    )


def cvar_multiplier(level) -> float:
    """kappa with CVaR_alpha(N(mu, sigma^2)) = mu + sigma * kappa."""
    lv = _level(level)
    return float(stats.norm.pdf(stats.norm.ppf(lv.alpha)) / lv.beta)


@dataclass(frozen=True)
class GaussianClass:
    """Perturbation class: fixed sigma, or sigma free in [sigma_min, sigma_max]."""

    mode: str = "fixed_sigma"
    sigma: Optional[float] = 1.0
    sigma_min: Optional[float] = None
    sigma_max: Optional[float] = None
    mean_range: Tuple[float, float] = (-1e6, 1e6)

    def __post_init__(self):
        lo, hi = self.mean_range
        if not lo < hi:
            raise ValueError("mean_range must be a nonempty interval")
        if self.mode == "fixed_sigma":
            if not (self.sigma is not None and self.sigma > 0):
                raise ValueError("sigma must be positive")
        elif self.mode == "free_sigma":
            if not (self.sigma_min and self.sigma_min > 0 and self.sigma_max):
                raise ValueError("free_sigma needs positive sigma_min and sigma_max")
            if self.sigma_min > self.sigma_max:
                raise ValueError("sigma_min must not exceed sigma_max")
        else:
            raise ValueError(f"unknown class mode {self.mode!r}")

    @classmethod
    def fixed(cls, sigma: float, mean_range=(-1e6, 1e6)) -> "GaussianClass":
        return cls("fixed_sigma", sigma, None, None, tuple(mean_range))

    @classmethod
    def free(cls, sigma_min: float, sigma_max: float, mean_range=(-1e6, 1e6)) -> "GaussianClass":
        return cls("free_sigma", None, sigma_min, sigma_max, tuple(mean_range))

    def check_arm(self, arm: Gaussian) -> None:
        lo, hi = self.mean_range
        if not lo <= arm.mu <= hi:
            raise ValueError(f"arm mean {arm.mu} outside class mean_range {self.mean_range}")
        if self.mode == "fixed_sigma" and not math.isclose(arm.sigma, self.sigma):
            raise ValueError("arm sigma differs from the class's fixed sigma")
        if self.mode == "free_sigma" and not self.sigma_min <= arm.sigma <= self.sigma_max:
            raise ValueError("arm sigma outside the class's sigma range")


@dataclass(frozen=True)
class EtaResult:
    """eta with its minimizing perturbation ``(mu', sigma')``.

    ``eta = inf`` marks an empty constraint region; ``eta = 0`` gives an
    infinite coefficient (the arm needs no perturbation).
    """

    eta: float
    minimizer: Optional[Tuple[float, float]]

    @property
    def lower_bound_coefficient(self) -> float:
        if self.eta == 0.0:
            return math.inf
        return 1.0 / self.eta

    @property
    def empty_region(self) -> bool:
        return math.isinf(self.eta)

    def to_dict(self) -> dict:
        def num(x):
            return x if math.isfinite(x) else None

        return {
            "eta": num(self.eta),
            "lower_bound_coefficient": num(self.lower_bound_coefficient),
            "empty_region": self.empty_region,
            "minimizer": None if self.minimizer is None else list(self.minimizer),
        }


_EMPTY = EtaResult(math.inf, None)


def _profile(mu: float, sigma: float, mean_cap, cls: GaussianClass) -> EtaResult:
    """min KL over sigma' of the class with mu' <= mean_cap(sigma').

    ``mean_cap`` returns the largest admissible mean for a given sigma'; the
    inner minimisation over mu' is the clip of mu onto the admissible range.
    """
    lo, hi = cls.mean_range

    def best_mu(s):
        cap = min(mean_cap(s), hi)
        if cap < lo:
            return None
        return min(max(mu, lo), cap)

    if cls.mode == "fixed_sigma":
        s = cls.sigma
        m = best_mu(s)
        if m is None:
            return _EMPTY
        return EtaResult(max(kl_gaussian(mu, sigma, m, s), 0.0), (m, s))

    def obj(s):
        m = best_mu(s)
        return math.inf if m is None else kl_gaussian(mu, sigma, m, s)

    grid = np.geomspace(cls.sigma_min, cls.sigma_max, 401)
    vals = np.array([obj(s) for s in grid])
    if not np.isfinite(vals).any():
        return _EMPTY
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    best_s, best_v = float(grid[i]), float(vals[i])
    if b > a:
        res = optimize.minimize_scalar(obj, bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-12})
        if res.fun < best_v:
            best_s, best_v = float(res.x), float(res.fun)
    return EtaResult(max(best_v, 0.0), (best_mu(best_s), best_s))


def eta_feasible(arm: Gaussian, mu_star: float, tau: float, level, cls: GaussianClass) -> EtaResult:
    """inf KL(arm, nu') over nu' in the class with mean < mu_star and CVaR <= tau."""
    cls.check_arm(arm)
    kappa = cvar_multiplier(level)
    return _profile(arm.mu, arm.sigma, lambda s: min(mu_star, tau - s * kappa), cls)


def eta_infeasible(arm: Gaussian, cvar_star: float, level, cls: GaussianClass) -> EtaResult:
    """inf KL(arm, nu') over nu' in the class with CVaR < cvar_star."""
    cls.check_arm(arm)
    kappa = cvar_multiplier(level)
    return _profile(arm.mu, arm.sigma, lambda s: cvar_star - s * kappa, cls)


def eta_cvar_minimization(arm: Gaussian, cvar_star: float, level, cls: GaussianClass) -> EtaResult:
    """Pure CVaR-minimisation eta by direct constrained optimisation.

    Independent of :func:`eta_infeasible`: the CVaR constraint is evaluated
    through the arm model's own CVaR and solved with SLSQP over
    ``(mu', log sigma')``.
    """
    cls.check_arm(arm)
    lv = _level(level)
    lo, hi = cls.mean_range
    if arm.cvar(lv) <= cvar_star:
        return EtaResult(0.0, (arm.mu, arm.sigma))
    if cls.mode == "fixed_sigma":
        s_lo = s_hi = math.log(cls.sigma)
    else:
        s_lo, s_hi = math.log(cls.sigma_min), math.log(cls.sigma_max)

    def unpack(x):
        return float(x[0]), math.exp(float(x[1]))

    def kl(x):
        m, s = unpack(x)
        return kl_gaussian(arm.mu, arm.sigma, m, s)

    def slack(x):
        m, s = unpack(x)
        return cvar_star - Gaussian(m, s).cvar(lv)

    best = None
    for s0 in np.linspace(s_lo, s_hi, 5 if s_hi > s_lo else 1):
        x0 = np.array([arm.mu - (arm.cvar(lv) - cvar_star), s0])
        res = optimize.minimize(
            kl, x0, method="SLSQP",
            bounds=[(lo, hi), (s_lo, s_hi)],
            constraints=[{"type": "ineq", "fun": slack}],
            options={"ftol": 1e-15, "maxiter": 500},
        )
        if slack(res.x) >= -1e-9 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        return _EMPTY
    m, s = unpack(best.x)
    return EtaResult(max(float(best.fun), 0.0), (m, s))


def theorem4_lower_bound(eta: EtaResult, horizon: int) -> float:
    """Asymptotic lower bound ``log(T) / eta`` on expected pulls (0 if none)."""
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    if eta.eta == 0.0 or math.isinf(eta.eta):
        return 0.0
    return math.log(horizon) / eta.eta


def instance_etas(spec: InstanceSpec, oracle: InstanceOracle, cls: Optional[GaussianClass] = None):
    """Per-arm EtaResults for a single-constraint all-Gaussian instance.

    Optimal arms get eta = 0.  Returns ``None`` when the instance is not
    Gaussian-only.  The default class fixes each arm's own sigma.
    """
    if spec.multi_constraint or not all(isinstance(a, Gaussian) for a in spec.arms):
        return None
    out = []
    for k, arm in enumerate(spec.arms):
        c = cls or GaussianClass.fixed(arm.sigma)
        if k in oracle.optimal_set:
            out.append(EtaResult(0.0, (arm.mu, arm.sigma)))
        elif oracle.is_feasible:
            out.append(eta_feasible(arm, oracle.mu_star, spec.tau, spec.level, c))
        else:
            out.append(eta_infeasible(arm, oracle.cvar_star, spec.level, c))
    return out
