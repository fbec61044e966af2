"""Arm models, ground-truth instance classification and theorem bounds.

Arms are indexed from 0.  For the multi-constraint (Con-LCB) mode the
constraint list is ordered so that the last constraint is the most important:
relaxation drops constraints from the front, following
``K_i = K_i^+ ∩ ... ∩ K_m^+``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate, stats

from .risk_core import MomentParams, RiskLevel, SubGaussianParams, _level

__all__ = [
    "ArmModel",
    "Constant",
    "Gaussian",
    "Uniform",
    "ShiftedPareto",
    "Discrete",
    "VectorArm",
    "arm_from_dict",
    "sample",
    "arm_mean",
    "arm_cvar",
    "cvar_by_quadrature",
    "Attribute",
    "AttributeConstraint",
    "InstanceSpec",
    "instance_from_dict",
    "InstanceOracle",
    "classify",
    "TheoremBounds",
    "theorem_bounds",
    "con_lcb_bounds",
    "find_t_star",
    "GAP_EPS",
]

GAP_EPS = 1e-12


class ArmModel:
    """Base class for scalar loss distributions."""

    kind: str = ""
    label: str = ""

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def cvar(self, level) -> float:
        return cvar_by_quadrature(self, level)

    def quantile(self, u):
        raise NotImplementedError

    def abs_moment(self, p: float) -> float:
        """E|X|^p by quadrature."""
        val, _ = integrate.quad(
            lambda u: abs(float(self.quantile(u))) ** p, 0.0, 1.0, limit=500
        )
        return val

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        d = {"kind": self.kind, **self.params()}
        if self.label:
            d["label"] = self.label
        return d

    @property
    def dim(self) -> int:
        return 1


@dataclass(frozen=True)
class Constant(ArmModel):
    value: float
    label: str = ""
    kind = "constant"

    def sample(self, rng, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))

    def mean(self):
        return float(self.value)

    def cvar(self, level):
        return float(self.value)

    def quantile(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.value)

    def abs_moment(self, p):
        return abs(self.value) ** p

    def params(self):
        return {"value": self.value}


@dataclass(frozen=True)
class Gaussian(ArmModel):
    mu: float
    sigma: float
    label: str = ""
    kind = "gaussian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("Gaussian sigma must be positive")

    def sample(self, rng, size=None):
        return rng.normal(self.mu, self.sigma, size)

    def mean(self):
        return float(self.mu)

    def cvar(self, level):
        a = _level(level)
        z = stats.norm.ppf(a.alpha)
        return float(self.mu + self.sigma * stats.norm.pdf(z) / a.beta)

    def quantile(self, u):
        return stats.norm.ppf(u, loc=self.mu, scale=self.sigma)

    def abs_moment(self, p):
        return float(stats.norm(self.mu, self.sigma).expect(lambda x: np.abs(x) ** p))

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Uniform(ArmModel):
    lo: float
    hi: float
    label: str = ""
    kind = "uniform"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("Uniform requires lo < hi")

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size)

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def cvar(self, level):
        a = _level(level)
        return self.lo + (self.hi - self.lo) * (1.0 + a.alpha) / 2.0

    def quantile(self, u):
        return self.lo + (self.hi - self.lo) * np.asarray(u, dtype=float)

    def params(self):
        return {"lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class ShiftedPareto(ArmModel):
    """Lomax loss: survival ``(scale/(scale+x))^shape`` on x >= 0, then shifted."""

    shape: float
    scale: float = 1.0
    shift: float = 0.0
    label: str = ""
    kind = "shifted_pareto"

    def __post_init__(self):
        if not self.shape > 1:
            raise ValueError("ShiftedPareto shape must exceed 1 (finite mean)")
        if not self.scale > 0:
            raise ValueError("ShiftedPareto scale must be positive")

    def sample(self, rng, size=None):
        return self.scale * rng.pareto(self.shape, size) + self.shift

    def mean(self):
        return self.scale / (self.shape - 1.0) + self.shift

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        return self.scale * ((1.0 - u) ** (-1.0 / self.shape) - 1.0) + self.shift

    def abs_moment(self, p):
        dist = stats.lomax(self.shape, loc=self.shift, scale=self.scale)
        return float(dist.expect(lambda x: np.abs(x) ** p))

    def params(self):
        return {"shape": self.shape, "scale": self.scale, "shift": self.shift}


@dataclass(frozen=True)
class Discrete(ArmModel):
    values: tuple
    probabilities: tuple
    label: str = ""
    kind = "discrete"

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        p = tuple(float(x) for x in self.probabilities)
        if len(v) == 0 or len(v) != len(p):
            raise ValueError("Discrete needs matching nonempty values/probabilities")
        if min(p) < 0 or abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError("Discrete probabilities must be nonnegative and sum to 1")
        order = np.argsort(v, kind="stable")
        object.__setattr__(self, "values", tuple(v[i] for i in order))
        object.__setattr__(self, "probabilities", tuple(p[i] for i in order))

    def sample(self, rng, size=None):
        idx = rng.choice(len(self.values), size=size, p=self.probabilities)
        return np.asarray(self.values)[idx] if size is not None else self.values[int(idx)]

    def mean(self):
        return math.fsum(v * p for v, p in zip(self.values, self.probabilities))

    def var(self, level) -> float:
        a = _level(level)
        cdf = 0.0
        for v, p in zip(self.values, self.probabilities):
            cdf += p
            if cdf >= a.alpha - 1e-12:
                return v
        return self.values[-1]

    def cvar(self, level):
        # definitional form, exact with atoms at the VaR
        a = _level(level)
        v = self.var(a)
        tail = math.fsum(p * max(x - v, 0.0) for x, p in zip(self.values, self.probabilities))
        return v + tail / a.beta

    def quantile(self, u):
        cum = np.cumsum(self.probabilities)
        idx = np.searchsorted(cum, np.asarray(u, dtype=float) - 1e-12, side="left")
        return np.asarray(self.values)[np.minimum(idx, len(self.values) - 1)]

    def abs_moment(self, p):
        return math.fsum(q * abs(v) ** p for v, q in zip(self.values, self.probabilities))

    def params(self):
        return {"values": list(self.values), "probabilities": list(self.probabilities)}


@dataclass(frozen=True)
class VectorArm:
    """Arm emitting a D-dimensional loss vector with independent coordinates."""

    components: tuple
    label: str = ""
    kind = "vector"

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps or not all(isinstance(c, ArmModel) for c in comps):
            raise ValueError("VectorArm needs at least one scalar component")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self):
        return len(self.components)

    def sample(self, rng, size=None):
        cols = [np.asarray(c.sample(rng, size), dtype=float) for c in self.components]
        return np.stack(cols, axis=-1)

    def to_dict(self):
        d = {"kind": "vector", "components": [c.to_dict() for c in self.components]}
        if self.label:
            d["label"] = self.label
        return d


_KINDS = {
    "constant": Constant,
    "gaussian": Gaussian,
    "uniform": Uniform,
    "shifted_pareto": ShiftedPareto,
    "discrete": Discrete,
}


def arm_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "vector":
        comps = tuple(arm_from_dict(c) for c in d.pop("components"))
        return VectorArm(comps, **d)
    if kind == "discrete":
        d["values"] = tuple(d["values"])
        d["probabilities"] = tuple(d["probabilities"])
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown arm kind {kind!r}") from None
    return cls(**d)


def sample(model, rng: np.random.Generator, size=None):
    """Draw from ``model``; identical generator states give identical draws."""
    return model.sample(rng, size)


def arm_mean(model) -> float:
    return model.mean()


def arm_cvar(model, level) -> float:
    return model.cvar(level)


def cvar_by_quadrature(model: ArmModel, level, tol: float = 1e-9) -> float:
    """``(1/beta) * integral_alpha^1 F^{-1}(u) du`` by adaptive quadrature."""
    a = _level(level)
    val, err, info = integrate.quad(
        lambda u: float(model.quantile(u)),
        a.alpha,
        1.0,
        epsabs=tol / 10,
        epsrel=1e-12,
        limit=1000,
        full_output=True,
    )[:3]
    if err > tol * a.beta:
        raise RuntimeError(
            f"CVaR quadrature did not converge for {model!r}: "
            f"estimate={val}, abserr={err}, neval={info.get('neval')}"
        )
    return val / a.beta


# ---------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class Attribute:
    """Arm attribute g(nu(k)) and its estimator.

    ``kind`` is ``"mean"``, ``"cvar"`` (needs ``alpha``) or ``"custom"``
    (needs ``estimator`` over a SampleBuffer and ``oracle`` over an arm
    model).  ``rate`` is the concentration rate ``a`` of the estimator, so
    the confidence width is ``sqrt(log(2T^2) / (a n))``.
    """

    kind: str = "mean"
    rate: float = 1.0
    alpha: Optional[float] = None
    coordinate: int = 0
    estimator: Optional[Callable] = field(default=None, compare=False)
    oracle: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("mean", "cvar", "custom"):
            raise ValueError(f"unknown attribute kind {self.kind!r}")
        if not self.rate > 0:
            raise ValueError("attribute rate must be positive")
        if self.kind == "cvar":
            RiskLevel(self.alpha if self.alpha is not None else -1.0)
        if self.kind == "custom" and (self.estimator is None or self.oracle is None):
            raise ValueError("custom attributes need estimator and oracle")

    def true_value(self, arm) -> float:
        comp = arm.components[self.coordinate] if isinstance(arm, VectorArm) else arm
        if self.coordinate and not isinstance(arm, VectorArm):
            raise ValueError("coordinate > 0 requires vector arms")
        if self.kind == "mean":
            return comp.mean()
        if self.kind == "cvar":
            return comp.cvar(self.alpha)
        return float(self.oracle(comp))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "rate": self.rate, "coordinate": self.coordinate}
        if self.alpha is not None:
            d["alpha"] = self.alpha
        return d


@dataclass(frozen=True)
class AttributeConstraint:
    attribute: Attribute
    threshold: float

    @property
    def rate(self) -> float:
        return self.attribute.rate

    @property
    def estimator_kind(self) -> str:
        return self.attribute.kind

    def to_dict(self) -> dict:
        return {**self.attribute.to_dict(), "threshold": self.threshold}


@dataclass(frozen=True)
class InstanceSpec:
    """Arms plus either a CVaR threshold ``tau`` or a constraint list."""

    arms: tuple
    tau: Optional[float] = None
    level: RiskLevel = field(default_factory=lambda: RiskLevel(0.95))
    constraints: Optional[tuple] = None
    objective: Optional[Attribute] = None

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        object.__setattr__(self, "level", _level(self.level))
        if not self.arms:
            raise ValueError("an instance needs at least one arm")
        if self.constraints is not None:
            object.__setattr__(self, "constraints", tuple(self.constraints))
            if self.tau is not None:
                raise ValueError("choose single-constraint or multi-constraint mode")
            if not self.constraints:
                raise ValueError("constraint list must be nonempty")
            if self.objective is None:
                object.__setattr__(self, "objective", Attribute("mean"))
        elif self.tau is None:
            raise ValueError("tau is required in single-constraint mode")

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    @property
    def multi_constraint(self) -> bool:
        return self.constraints is not None

    def with_tau(self, tau: float) -> "InstanceSpec":
        return InstanceSpec(self.arms, tau=tau, level=self.level)

    def to_dict(self) -> dict:
        d = {"level": self.level.alpha, "arms": [a.to_dict() for a in self.arms]}
        if self.multi_constraint:
            d["objective"] = self.objective.to_dict()
            d["constraints"] = [c.to_dict() for c in self.constraints]
        else:
            d["tau"] = self.tau
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def instance_from_dict(d: dict) -> InstanceSpec:
    """Inverse of :meth:`InstanceSpec.to_dict`."""
    arms = [arm_from_dict(a) for a in d["arms"]]
    level = RiskLevel(d.get("level", 0.95))
    if d.get("constraints") is not None:
        obj = d.get("objective") or {"kind": "mean"}
        cons = []
        for c in d["constraints"]:
            c = dict(c)
            thr = c.pop("threshold")
            cons.append(AttributeConstraint(Attribute(**c), thr))
        return InstanceSpec(arms, tau=d.get("tau"), level=level, constraints=cons,
                            objective=Attribute(**obj))
    return InstanceSpec(arms, tau=d.get("tau"), level=level)


def _argmin_set(values: Sequence[float], among: Sequence[int]) -> tuple:
    best = min(values[k] for k in among)
    return tuple(k for k in among if values[k] <= best + GAP_EPS)


@dataclass(frozen=True)
class InstanceOracle:
    """Ground truth for one instance; arm indices are 0-based.

    Gap fields that do not apply to the instance type are ``None``.
    ``gap_tau`` is ``max(c - tau, 0)`` per arm (for multi-constraint
    instances, the largest constraint violation).
    """

    means: tuple
    cvars: tuple
    feasible_set: tuple
    deceiver_set: tuple
    optimal_set: tuple
    mu_star: Optional[float]
    cvar_star: Optional[float]
    gap_mean: Optional[tuple]
    gap_tau: tuple
    gap_risk: Optional[tuple]
    is_feasible: bool
    fingerprint: str = ""
    attribute_values: Optional[tuple] = None
    constraint_gaps: Optional[tuple] = None
    i_star: Optional[int] = None

    @property
    def n_arms(self) -> int:
        return len(self.means)

    def category(self, k: int) -> str:
        if k in self.optimal_set:
            return "optimal"
        if not self.is_feasible:
            return "risk"
        if k in self.deceiver_set:
            return "deceiver"
        if k in self.feasible_set:
            return "feasible_suboptimal"
        return "infeasible_suboptimal"

    def to_dict(self) -> dict:
        def lst(x):
            return None if x is None else [float(v) for v in x]

        d = {
            "means": lst(self.means),
            "cvars": lst(self.cvars),
            "feasible_set": list(self.feasible_set),
            "deceiver_set": list(self.deceiver_set),
            "optimal_set": list(self.optimal_set),
            "mu_star": self.mu_star,
            "cvar_star": self.cvar_star,
            "gap_mean": lst(self.gap_mean),
            "gap_tau": lst(self.gap_tau),
            "gap_risk": lst(self.gap_risk),
            "is_feasible": self.is_feasible,
            "categories": [self.category(k) for k in range(self.n_arms)],
        }
        if self.attribute_values is not None:
            d["attribute_values"] = [lst(r) for r in self.attribute_values]
            d["constraint_gaps"] = [lst(r) for r in self.constraint_gaps]
            d["i_star"] = self.i_star
        return d


def _scalar(arm):
    return arm.components[0] if isinstance(arm, VectorArm) else arm


def classify(spec: InstanceSpec) -> InstanceOracle:
    if spec.multi_constraint:
        return _classify_multi(spec)
    K = spec.n_arms
    means = tuple(float(_scalar(a).mean()) for a in spec.arms)
    cvars = tuple(float(_scalar(a).cvar(spec.level)) for a in spec.arms)
    tau = spec.tau
    feasible = tuple(k for k in range(K) if cvars[k] <= tau)
    gap_tau = tuple(max(c - tau, 0.0) for c in cvars)
    if feasible:
        optimal = _argmin_set(means, feasible)
        mu_star = means[optimal[0]]
        deceivers = tuple(k for k in range(K) if cvars[k] > tau and means[k] <= mu_star)
        gap_mean = tuple(max(m - mu_star, 0.0) for m in means)
        return InstanceOracle(
            means, cvars, feasible, deceivers, optimal, mu_star, None,
            gap_mean, gap_tau, None, True, spec.fingerprint(),
        )
    optimal = _argmin_set(cvars, range(K))
    cvar_star = cvars[optimal[0]]
    gap_risk = tuple(0.0 if k in optimal else c - cvar_star for k, c in enumerate(cvars))
    return InstanceOracle(
        means, cvars, (), (), optimal, None, cvar_star,
        None, gap_tau, gap_risk, False, spec.fingerprint(),
    )


def _classify_multi(spec: InstanceSpec) -> InstanceOracle:
    K = spec.n_arms
    m = len(spec.constraints)
    attrs = [spec.objective] + [c.attribute for c in spec.constraints]
    g = [tuple(float(a.true_value(arm)) for arm in spec.arms) for a in attrs]
    taus = [c.threshold for c in spec.constraints]
    cgaps = tuple(tuple(max(g[i + 1][k] - taus[i], 0.0) for k in range(K)) for i in range(m))
    sat = [frozenset(k for k in range(K) if g[i + 1][k] <= taus[i]) for i in range(m)]
    feasible = tuple(sorted(frozenset(range(K)).intersection(*sat)))
    gap_tau = tuple(max(cgaps[i][k] for i in range(m)) for k in range(K))
    means = g[0]
    cvars = tuple(float(_scalar(a).cvar(spec.level)) for a in spec.arms)
    if feasible:
        optimal = _argmin_set(g[0], feasible)
        g0_star = g[0][optimal[0]]
        deceivers = tuple(k for k in range(K) if k not in feasible and g[0][k] <= g0_star)
        gap_mean = tuple(max(v - g0_star, 0.0) for v in g[0])
        return InstanceOracle(
            means, cvars, feasible, deceivers, optimal, g0_star, None, gap_mean,
            gap_tau, None, True, spec.fingerprint(), tuple(g), cgaps, None,
        )
    # constraint index i is 1-based; candidates for i are K_{i+1} = sat[i] ∩ ... ∩ sat[m-1]
    i_star, cand = m, frozenset(range(K))
    for i in range(1, m + 1):
        cand_i = frozenset(range(K)).intersection(*sat[i:])
        if cand_i:
            i_star, cand = i, cand_i
            break
    cand = tuple(sorted(cand))
    optimal = _argmin_set(g[i_star], cand)
    best = g[i_star][optimal[0]]
    gap_risk = []
    for k in range(K):
        if k in optimal:
            gap_risk.append(0.0)
            continue
        later = [cgaps[j][k] for j in range(i_star, m)]
        gap_risk.append(max([g[i_star][k] - best, 0.0] + later))
    return InstanceOracle(
        means, cvars, (), (), optimal, None, best, None, gap_tau,
        tuple(gap_risk), False, spec.fingerprint(), tuple(g), cgaps, i_star,
    )


# ---------------------------------------------------------------------------
# theorem bounds


@dataclass(frozen=True)
class TheoremBounds:
    """Per-arm pull-count bounds; ``None`` marks "not applicable"."""

    horizon: int
    category: tuple
    u: tuple
    v: tuple
    w: tuple
    t_star: Optional[int]
    rhs_feasible_suboptimal: tuple
    rhs_deceiver: tuple
    rhs_infeasible_suboptimal: tuple
    rhs_risk: tuple
    ht: Optional[dict] = None
    fingerprint: str = ""
    family: str = "subgaussian"

    @property
    def rhs(self) -> tuple:
        """The right-hand side that applies to each arm's category."""
        out = []
        for k, cat in enumerate(self.category):
            src = {
                "feasible_suboptimal": self.rhs_feasible_suboptimal,
                "deceiver": self.rhs_deceiver,
                "infeasible_suboptimal": self.rhs_infeasible_suboptimal,
                "risk": self.rhs_risk,
            }.get(cat)
            out.append(None if src is None else src[k])
        return tuple(out)

    def rhs_ht(self) -> tuple:
        if self.ht is None:
            raise ValueError("no heavy-tail bounds: MomentParams were not given")
        return tuple(self.ht["rhs"])

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "horizon": self.horizon,
            "category": list(self.category),
            "u": list(self.u),
            "v": list(self.v),
            "w": list(self.w),
            "t_star": self.t_star,
            "rhs": list(self.rhs),
        }
        if self.ht is not None:
            d["ht"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.ht.items()}
        return d


def _nz(gap) -> bool:
    return gap is not None and gap > GAP_EPS


def _ceil(x: float) -> int:
    return int(math.ceil(x - 1e-12 * max(1.0, abs(x))))


def find_t_star(v_of_t: Callable[[int], float], t_min: int) -> int:
    """Smallest integer T >= t_min with ``T > v_of_t(T)``.

    ``T - v(T)`` with ``v`` growing like log T first falls and then rises,
    so the failing set is an initial segment; gallop then bisect.
    """
    lo = t_min
    if lo > v_of_t(lo):
        return lo
    hi = max(2 * lo, 2)
    while not hi > v_of_t(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mid > v_of_t(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _sg_terms(sg: SubGaussianParams, beta: float, T: int, k_mult: int):
    log_c = math.log(2.0 * sg.d_big * k_mult * T**2)

    def cvar_count(gap):
        return 4.0 * log_c / (sg.d_small * beta**2 * gap**2)

    def mean_count(gap):
        return 16.0 * sg.sigma**2 * math.log(T) / gap**2

    return cvar_count, mean_count


def _ht_terms(mp: MomentParams, beta: float, T: int):
    p, B = mp.p, mp.b_bound

    def cvar_count(gap):
        return (
            44.0 * math.log(6.0 * T**2) / (beta * (p - 1.0) ** 2)
            * max(1.0 / beta**2, B ** (2.0 / (p - 1.0)) * (2.0 * p) ** (2.0 * p / (p - 1.0))
                  / gap ** (2.0 * p / (p - 1.0)))
        )

    def mean_count(gap):
        return (8.0 / gap) ** (p / (p - 1.0)) * B ** (1.0 / (p - 1.0)) * math.log(2.0 * T**2)

    return cvar_count, mean_count


def _rhs_table(oracle: InstanceOracle, cvar_count, mean_count, K: int):
    n = oracle.n_arms
    u, v, w = [None] * n, [None] * n, [None] * n
    fs, dc, inf_, rk = [None] * n, [None] * n, [None] * n, [None] * n
    for k in range(n):
        if oracle.is_feasible:
            if _nz(oracle.gap_mean[k]):
                u[k] = _ceil(mean_count(oracle.gap_mean[k]))
            if _nz(oracle.gap_tau[k]):
                v[k] = _ceil(cvar_count(oracle.gap_tau[k]))
        else:
            v[k] = _ceil(cvar_count(oracle.gap_tau[k])) if _nz(oracle.gap_tau[k]) else None
            if _nz(oracle.gap_risk[k]):
                w[k] = _ceil(cvar_count(oracle.gap_risk[k]))
        cat = oracle.category(k)
        if cat == "feasible_suboptimal":
            fs[k] = mean_count(oracle.gap_mean[k]) + 5
        elif cat == "deceiver":
            dc[k] = cvar_count(oracle.gap_tau[k]) + 2
        elif cat == "infeasible_suboptimal":
            inf_[k] = min(cvar_count(oracle.gap_tau[k]), mean_count(oracle.gap_mean[k])) + 5
        elif cat == "risk" and _nz(oracle.gap_risk[k]):
            rk[k] = cvar_count(oracle.gap_risk[k]) + K + 2
    return u, v, w, fs, dc, inf_, rk


def theorem_bounds(
    oracle: InstanceOracle,
    sg: Optional[SubGaussianParams],
    level,
    horizon: int,
    mp: Optional[MomentParams] = None,
    k_inflated: bool = False,
) -> TheoremBounds:
    """Pull-count thresholds and theorem right-hand sides for RC-LCB.

    Sub-Gaussian bounds are computed when ``sg`` is given (otherwise those
    rows are "not applicable"); heavy-tail (RCLCB-HT) bounds are added under
    ``ht`` when ``mp`` is given.  ``k_inflated`` uses ``log(2 D K T^2)`` in
    the CVaR terms.
    """
    T = int(horizon)
    if T < 2:
        raise ValueError("horizon must be at least 2")
    if oracle.attribute_values is not None:
        raise ValueError("multi-constraint instances: use con_lcb_bounds")
    beta = _level(level).beta
    K = oracle.n_arms
    k_mult = K if k_inflated else 1
    if sg is None and mp is None:
        raise ValueError("need SubGaussianParams or MomentParams")
    cats = tuple(oracle.category(k) for k in range(K))
    t_star = None
    if sg is None:
        u = v = w = fs = dc = inf_ = rk = [None] * K
    else:
        cvar_count, mean_count = _sg_terms(sg, beta, T, k_mult)
        u, v, w, fs, dc, inf_, rk = _rhs_table(oracle, cvar_count, mean_count, K)
    if sg is not None and not oracle.is_feasible:
        def total_v(t):
            c, _ = _sg_terms(sg, beta, t, k_mult)
            return sum(_ceil(c(g)) for g in oracle.gap_tau)

        t_star = find_t_star(total_v, K)

    ht = None
    if mp is not None:
        c_ht, m_ht = _ht_terms(mp, beta, T)
        hu, hv, hw, hfs, hdc, hinf, hrk = _rhs_table(oracle, c_ht, m_ht, K)
        ht_rhs = []
        for k, cat in enumerate(cats):
            ht_rhs.append({"feasible_suboptimal": hfs, "deceiver": hdc,
                           "infeasible_suboptimal": hinf, "risk": hrk}.get(cat, [None] * K)[k])
        ht_tstar = None
        if not oracle.is_feasible:
            def total_v_ht(t):
                c, _ = _ht_terms(mp, beta, t)
                return sum(_ceil(c(g)) for g in oracle.gap_tau)

            ht_tstar = find_t_star(total_v_ht, K)
        ht = {
            "u": tuple(hu), "v": tuple(hv), "w": tuple(hw), "t_star": ht_tstar,
            "rhs_feasible_suboptimal": tuple(hfs), "rhs_deceiver": tuple(hdc),
            "rhs_infeasible_suboptimal": tuple(hinf), "rhs_risk": tuple(hrk),
            "rhs": tuple(ht_rhs),
        }
    return TheoremBounds(
        T, cats, tuple(u), tuple(v), tuple(w), t_star,
        tuple(fs), tuple(dc), tuple(inf_), tuple(rk), ht, oracle.fingerprint,
        "subgaussian" if sg is not None else "heavy_tail",
    )


def con_lcb_bounds(oracle: InstanceOracle, spec: InstanceSpec, horizon: int) -> TheoremBounds:
    """Con-LCB pull-count bounds on a feasible multi-constraint instance.

    Infeasible instances get "not applicable" rows: no bound is stated for them.
    """
    if oracle.attribute_values is None:
        raise ValueError("con_lcb_bounds needs a multi-constraint oracle")
    T = int(horizon)
    K, m = oracle.n_arms, len(spec.constraints)
    L = math.log(2.0 * T**2)
    a0 = spec.objective.rate
    rates = [c.rate for c in spec.constraints]
    cats = tuple(oracle.category(k) for k in range(K))
    na = (None,) * K
    if not oracle.is_feasible:
        return TheoremBounds(T, cats, na, na, na, None, na, na, na, na, None,
                             oracle.fingerprint, "con_lcb")
    fs, dc, inf_ = [None] * K, [None] * K, [None] * K
    u, v = [None] * K, [None] * K

    def constraint_term(k):
        terms = [4 * L / (rates[i] * oracle.constraint_gaps[i][k] ** 2)
                 for i in range(m) if _nz(oracle.constraint_gaps[i][k])]
        return min(terms) if terms else math.inf

    for k, cat in enumerate(cats):
        if _nz(oracle.gap_mean[k]):
            u[k] = _ceil(4 * L / (a0 * oracle.gap_mean[k] ** 2))
        ct = constraint_term(k)
        if math.isfinite(ct):
            v[k] = _ceil(ct)
        if cat == "feasible_suboptimal":
            fs[k] = 4 * L / (a0 * oracle.gap_mean[k] ** 2) + 2 * m + 3
        elif cat == "deceiver":
            dc[k] = ct + m
        elif cat == "infeasible_suboptimal":
            inf_[k] = min(4 * L / (a0 * oracle.gap_mean[k] ** 2), ct) + 2 * m + 3
    return TheoremBounds(T, cats, tuple(u), tuple(v), na, None, tuple(fs), tuple(dc),
                         tuple(inf_), na, None, oracle.fingerprint, "con_lcb")
