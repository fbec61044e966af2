"""Risk-constrained LCB policies behind a select/observe/flag contract.

Every policy plays arms ``0..K-1`` once in index order, then picks arms
from statistics of the pulls so far; exactly ``horizon`` pulls happen.
Argmin ties go to the lowest arm index.
"""
from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from typing import Callable, Optional, Sequence

import numpy as np

from .instances import Attribute, AttributeConstraint
from .risk_core import (
    MomentParams,
    RiskLevel,
    SampleBuffer,
    SubGaussianParams,
    _level,
    cbs_bias_plus_deviation,
    cvar_trunc_level,
    mean_trunc_level,
    tail_counts,
)

__all__ = [
    "Policy",
    "RCLCB",
    "RCLCBHT",
    "ConLCB",
    "BaselineLCB",
    "BaselineCVaRLCB",
    "ConstraintEstimatorPlugin",
    "matched_cvar_rate",
    "matched_mean_rate",
    "make_policy",
    "POLICY_NAMES",
]


class ProtocolError(RuntimeError):
    pass


def _fast_cvar(asc: list, beta: float, b_c: Optional[float] = None) -> float:
    """Order-statistic CVaR from an ascending list, optionally clamped at b_c."""
    n = len(asc)
    nb, lo, hi = tail_counts(n, beta)
    pivot = asc[n - hi]
    if b_c is None:
        if lo == 0:
            return pivot
        return pivot + (sum(asc[n - lo:]) - lo * pivot) / nb
    pivot = min(max(pivot, -b_c), b_c)
    if lo == 0:
        return pivot
    # clamp the top lo order statistics to [-b_c, b_c] using the sort order
    start = n - lo
    upper = max(bisect_right(asc, b_c), start)
    lower = min(max(bisect_left(asc, -b_c), start), upper)
    s = (lower - start) * -b_c + sum(asc[lower:upper]) + (n - upper) * b_c
    return pivot + (s - lo * pivot) / nb


def _argmin(keys: Sequence[float], among: Sequence[int]) -> int:
    best, best_k = math.inf, -1
    for k in among:
        if keys[k] < best or best_k < 0:
            best, best_k = keys[k], k
    return best_k


class Policy:
    """Shared bookkeeping: buffers, pull counts, round counter, protocol."""

    name = "policy"

    def __init__(self, n_arms: int, horizon: int):
        if n_arms < 1:
            raise ValueError("need at least one arm")
        if horizon < n_arms:
            raise ValueError("horizon must be at least the number of arms")
        self.n_arms = n_arms
        self.horizon = int(horizon)
        self.round = 0
        self.pulls = [0] * n_arms
        self.buffers = [SampleBuffer() for _ in range(n_arms)]
        self.last_feasible_set: Optional[tuple] = None
        self._pending: Optional[int] = None

    # -- protocol ---------------------------------------------------------
    def select(self) -> int:
        if self.round >= self.horizon:
            raise ProtocolError("horizon exhausted")
        if self._pending is not None:
            raise ProtocolError("protocol violation: select called twice")
        if self.round < self.n_arms:
            arm = self.round
        else:
            arm = self._choose()
        self._pending = arm
        return arm

    def observe(self, arm: int, sample) -> None:
        if self._pending is None or arm != self._pending:
            raise ProtocolError("protocol violation")
        self._pending = None
        self._store(arm, sample)
        self.pulls[arm] += 1
        self.round += 1
        self._refresh(arm)

    def _store(self, arm: int, sample) -> None:
        self.buffers[arm].append(float(sample))

    def _require_init(self) -> None:
        if min(self.pulls) == 0:
            raise ProtocolError("initialization incomplete")

    def feasibility_flag(self) -> bool:
        if self.round != self.horizon:
            raise ProtocolError("feasibility flag requested before the horizon")
        return bool(self.plausibly_feasible_set())

    # -- hooks --------------------------------------------------------------
    def _choose(self) -> int:
        raise NotImplementedError

    def _refresh(self, arm: int) -> None:
        pass

    def plausibly_feasible_set(self) -> tuple:
        self._require_init()
        return tuple(range(self.n_arms))


class RCLCB(Policy):
    """Risk-constrained LCB for sub-Gaussian arms.

    Keeps arms whose CVaR upper confidence bound is within ``tau``; plays the
    lowest mean LCB among them, or the lowest CVaR LCB when none qualify.

    ``cvar_width`` optionally replaces the CVaR width sequence (test hook).
    """

    name = "rc_lcb"

    def __init__(
        self,
        n_arms: int,
        horizon: int,
        tau: float,
        level,
        sg: SubGaussianParams,
        k_inflated: bool = False,
        cvar_width: Optional[Callable[[int], float]] = None,
    ):
        super().__init__(n_arms, horizon)
        self.tau = float(tau)
        self.level = _level(level)
        self.sg = sg
        T = self.horizon
        k_mult = n_arms if k_inflated else 1
        self._cw_const = (
            math.sqrt(math.log(2.0 * sg.d_big * k_mult * T**2) / sg.d_small) / self.level.beta
        )
        self._mw_const = sg.sigma * math.sqrt(2.0 * math.log(T**2))
        self._cvar_width = cvar_width
        self.mean_hat = [0.0] * n_arms
        self.cvar_hat = [0.0] * n_arms
        self.cvar_w = [math.inf] * n_arms
        self.mean_w = [math.inf] * n_arms

    def _cvar_width_at(self, n: int) -> float:
        if self._cvar_width is not None:
            return self._cvar_width(n)
        return self._cw_const / math.sqrt(n)

    def _refresh(self, arm: int) -> None:
        n = self.pulls[arm]
        buf = self.buffers[arm]
        self.mean_hat[arm] = buf.mean()
        self.cvar_hat[arm] = _fast_cvar(buf.ascending(), self.level.beta)
        self.cvar_w[arm] = self._cvar_width_at(n)
        self.mean_w[arm] = self._mw_const / math.sqrt(n)

    def plausibly_feasible_set(self) -> tuple:
        self._require_init()
        tau = self.tau
        s = tuple(
            k for k in range(self.n_arms) if self.cvar_hat[k] <= tau + self.cvar_w[k]
        )
        self.last_feasible_set = s
        return s

    def _choose(self) -> int:
        feas = self.plausibly_feasible_set()
        if feas:
            keys = [m - w for m, w in zip(self.mean_hat, self.mean_w)]
            return _argmin(keys, feas)
        keys = [c - w for c, w in zip(self.cvar_hat, self.cvar_w)]
        return _argmin(keys, range(self.n_arms))


class RCLCBHT(RCLCB):
    """RC-LCB with truncated estimators for arms with E|X|^p <= B."""

    name = "rclcb_ht"

    def __init__(self, n_arms: int, horizon: int, tau: float, level, mp: MomentParams):
        lv = _level(level)
        if lv.beta > 0.5:
            raise ValueError("heavy-tail schedule requires alpha > 0.5")
        Policy.__init__(self, n_arms, horizon)
        self.tau = float(tau)
        self.level = lv
        self.mp = mp
        T = self.horizon
        self._delta = 1.0 / T**2
        self._mean_log = math.log(2.0 * T**2)
        self._tea_sum = [0.0] * n_arms
        self.mean_hat = [0.0] * n_arms
        self.cvar_hat = [0.0] * n_arms
        self.cvar_w = [math.inf] * n_arms
        self.mean_w = [math.inf] * n_arms
        p = mp.p
        self._mw_const = 4.0 * mp.b_bound ** (1.0 / p) * self._mean_log ** ((p - 1.0) / p)

    def _store(self, arm: int, sample) -> None:
        x = float(sample)
        i = self.pulls[arm] + 1
        b = (self.mp.b_bound * i / self._mean_log) ** (1.0 / self.mp.p)
        if abs(x) <= b:
            self._tea_sum[arm] += x
        self.buffers[arm].append(x)

    def _refresh(self, arm: int) -> None:
        n = self.pulls[arm]
        p = self.mp.p
        b_c = cvar_trunc_level(n, self.level, self.mp, self._delta)
        self.mean_hat[arm] = self._tea_sum[arm] / n
        self.cvar_hat[arm] = _fast_cvar(self.buffers[arm].ascending(), self.level.beta, b_c)
        self.cvar_w[arm] = cbs_bias_plus_deviation(n, self.level, self.mp, self.horizon)
        self.mean_w[arm] = self._mw_const / n ** ((p - 1.0) / p)


class ConstraintEstimatorPlugin:
    """Estimator for one attribute plus its width ``sqrt(log(2T^2)/(a n))``."""

    def __init__(self, attribute: Attribute, horizon: int):
        self.attribute = attribute
        self.rate = attribute.rate
        self._wconst = math.sqrt(math.log(2.0 * horizon**2) / attribute.rate)
        if attribute.kind == "cvar":
            self._beta = RiskLevel(attribute.alpha).beta

    def estimate(self, buffer: SampleBuffer) -> float:
        kind = self.attribute.kind
        if kind == "mean":
            return buffer.mean()
        if kind == "cvar":
            return _fast_cvar(buffer.ascending(), self._beta)
        return float(self.attribute.estimator(buffer))

    def width(self, n: int) -> float:
        return self._wconst / math.sqrt(n)


class ConLCB(Policy):
    """Constrained LCB over m attribute constraints.

    ``constraints`` are ordered by increasing importance; when no arm is
    plausibly feasible, constraints are dropped from the front until some
    arm satisfies the rest, and the first dropped attribute is minimised.
    """

    name = "con_lcb"

    def __init__(
        self,
        n_arms: int,
        horizon: int,
        constraints: Sequence[AttributeConstraint],
        objective: Optional[Attribute] = None,
    ):
        super().__init__(n_arms, horizon)
        if not constraints:
            raise ValueError("need at least one constraint")
        self.constraints = tuple(constraints)
        self.m = len(self.constraints)
        objective = objective or Attribute("mean")
        attrs = [objective] + [c.attribute for c in self.constraints]
        self.plugins = [ConstraintEstimatorPlugin(a, self.horizon) for a in attrs]
        self.taus = [math.nan] + [float(c.threshold) for c in self.constraints]
        self.coords = sorted({a.coordinate for a in attrs})
        self.coord_buffers = [{c: SampleBuffer() for c in self.coords} for _ in range(n_arms)]
        self.g_hat = [[0.0] * n_arms for _ in attrs]
        self.g_w = [[math.inf] * n_arms for _ in attrs]

    def _store(self, arm: int, sample) -> None:
        x = np.atleast_1d(np.asarray(sample, dtype=float))
        for c in self.coords:
            self.coord_buffers[arm][c].append(x[c])
        self.buffers[arm].append(x[0])

    def _refresh(self, arm: int) -> None:
        n = self.pulls[arm]
        for i, plug in enumerate(self.plugins):
            buf = self.coord_buffers[arm][plug.attribute.coordinate]
            self.g_hat[i][arm] = plug.estimate(buf)
            self.g_w[i][arm] = plug.width(n)

    def constraint_sets(self) -> list:
        """Plausibly-satisfying sets for constraints 1..m (index 0 unused)."""
        self._require_init()
        sets = [None]
        for i in range(1, self.m + 1):
            g, w, tau = self.g_hat[i], self.g_w[i], self.taus[i]
            sets.append(frozenset(k for k in range(self.n_arms) if g[k] <= tau + w[k]))
        return sets

    def plausibly_feasible_set(self) -> tuple:
        sets = self.constraint_sets()
        s = tuple(sorted(frozenset(range(self.n_arms)).intersection(*sets[1:])))
        self.last_feasible_set = s
        return s

    def _lcb_argmin(self, i: int, among) -> int:
        keys = [g - w for g, w in zip(self.g_hat[i], self.g_w[i])]
        return _argmin(keys, among)

    def _choose(self) -> int:
        sets = self.constraint_sets()
        everything = frozenset(range(self.n_arms))
        feas = sorted(everything.intersection(*sets[1:]))
        self.last_feasible_set = tuple(feas)
        if feas:
            return self._lcb_argmin(0, feas)
        for i in range(1, self.m + 1):
            cand = everything.intersection(*sets[i + 1:])
            if cand:
                return self._lcb_argmin(i, sorted(cand))
        raise AssertionError("unreachable: K_{m+1} is all arms")


class BaselineLCB(Policy):
    """Unconstrained mean LCB; ignores the risk threshold entirely.

    It never estimates CVaR, so its feasibility flag is always ``True``.
    """

    name = "baseline_lcb"

    def __init__(self, n_arms: int, horizon: int, sigma: float):
        super().__init__(n_arms, horizon)
        self._mw_const = sigma * math.sqrt(2.0 * math.log(self.horizon**2))
        self._sums = [0.0] * n_arms

    def _store(self, arm: int, sample) -> None:
        self._sums[arm] += float(sample)

    def _choose(self) -> int:
        keys = [s / n - self._mw_const / math.sqrt(n) for s, n in zip(self._sums, self.pulls)]
        return _argmin(keys, range(self.n_arms))

    def feasibility_flag(self) -> bool:
        if self.round != self.horizon:
            raise ProtocolError("feasibility flag requested before the horizon")
        return True


class BaselineCVaRLCB(RCLCB):
    """Pure CVaR minimisation: always plays the smallest CVaR LCB.

    With a finite ``tau`` the flag is computed like RC-LCB's.
    """

    name = "baseline_cvar_lcb"

    def __init__(self, n_arms, horizon, level, sg, tau: float = math.inf, k_inflated=False):
        super().__init__(n_arms, horizon, tau, level, sg, k_inflated)

    def _choose(self) -> int:
        keys = [c - w for c, w in zip(self.cvar_hat, self.cvar_w)]
        return _argmin(keys, range(self.n_arms))


def matched_cvar_rate(sg: SubGaussianParams, level, horizon: int, k_mult: int = 1) -> float:
    """Rate ``a`` making ``sqrt(log(2T^2)/(a n))`` equal RC-LCB's CVaR width."""
    beta = _level(level).beta
    T = horizon
    return sg.d_small * beta**2 * math.log(2.0 * T**2) / math.log(2.0 * sg.d_big * k_mult * T**2)


def matched_mean_rate(sigma: float, horizon: int) -> float:
    """Rate ``a_0`` making the Con-LCB objective width equal RC-LCB's mean width."""
    T = horizon
    return math.log(2.0 * T**2) / (2.0 * sigma**2 * math.log(T**2))


POLICY_NAMES = ("rc_lcb", "rclcb_ht", "con_lcb", "baseline_lcb", "baseline_cvar_lcb")


def make_policy(name: str, spec, horizon: int, params: dict) -> Policy:
    """Build a policy for ``spec`` from a flat parameter dict.

    Recognised keys: ``sigma``, ``d_big``, ``d_small``, ``k_inflated`` for
    the sub-Gaussian policies, ``p`` and ``b_bound`` for ``rclcb_ht``.
    """
    K = spec.n_arms
    if name == "con_lcb":
        if not spec.multi_constraint:
            raise ValueError("con_lcb needs a multi-constraint instance")
        return ConLCB(K, horizon, spec.constraints, spec.objective)
    if spec.multi_constraint:
        raise ValueError(f"{name} needs a single-constraint instance")
    if name == "rclcb_ht":
        mp = MomentParams(params["p"], params["b_bound"])
        return RCLCBHT(K, horizon, spec.tau, spec.level, mp)
    if name == "baseline_lcb":
        return BaselineLCB(K, horizon, params["sigma"])
    sg = SubGaussianParams(params["sigma"], params.get("d_big", 2.0), params.get("d_small"))
    if name == "rc_lcb":
        return RCLCB(K, horizon, spec.tau, spec.level, sg, params.get("k_inflated", False))
    if name == "baseline_cvar_lcb":
        return BaselineCVaRLCB(K, horizon, spec.level, sg, spec.tau, params.get("k_inflated", False))
    raise ValueError(f"unknown policy {name!r}")
