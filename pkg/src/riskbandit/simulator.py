"""Episode execution, pseudo-regret accounting and Monte-Carlo aggregation."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .instances import InstanceOracle, InstanceSpec, TheoremBounds, classify
from .policies import make_policy

__all__ = [
    "RunRecord",
    "AggregateReport",
    "BoundRow",
    "TradeoffRow",
    "TradeoffTable",
    "checkpoints",
    "run_episode",
    "monte_carlo",
    "compare_to_bounds",
    "tradeoff_experiment",
    "fit_log_slope",
    "default_workers",
    "EpisodeError",
]

_CHUNK = 512


def checkpoints(horizon: int) -> tuple:
    """``ceil(T / 2^j)`` for j = 0, 1, ... down to 1, ascending and deduplicated."""
    pts, j = set(), 0
    while True:
        c = -(-horizon // (1 << j))
        pts.add(c)
        if c == 1:
            break
        j += 1
    return tuple(sorted(pts))


def default_workers() -> int:
    env = os.environ.get("RISKBANDIT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


class _ArmStreams:
    """Per-arm independent sample streams derived from one integer seed.

    Arm k's j-th draw depends only on (seed, k, j), so different policies on
    the same seed see the same samples for the same pull of the same arm.
    """

    def __init__(self, arms, seed: int):
        children = np.random.SeedSequence(seed).spawn(len(arms))
        self.arms = arms
        self.rngs = [np.random.Generator(np.random.Philox(c)) for c in children]
        self.cache = [[] for _ in arms]
        self.pos = [0] * len(arms)

    def next(self, k: int):
        if self.pos[k] >= len(self.cache[k]):
            block = np.asarray(self.arms[k].sample(self.rngs[k], _CHUNK), dtype=float)
            self.cache[k] = block.tolist() if block.ndim == 1 else list(block)
            self.pos[k] = 0
        x = self.cache[k][self.pos[k]]
        self.pos[k] += 1
        return x


def _gap_weights(oracle: InstanceOracle):
    K = oracle.n_arms
    if oracle.is_feasible:
        sub = np.array([oracle.gap_mean[k] if k in oracle.feasible_set else 0.0 for k in range(K)])
        inf_ = np.array([0.0 if k in oracle.feasible_set else oracle.gap_tau[k] for k in range(K)])
        return {"sub": sub, "inf": inf_, "risk": None}
    return {"sub": None, "inf": None, "risk": np.asarray(oracle.gap_risk, dtype=float)}


@dataclass(frozen=True)
class RunRecord:
    """One episode.  ``pulls_at[i]`` holds per-arm counts at ``checkpoints[i]``."""

    horizon: int
    checkpoints: tuple
    pulls_at: np.ndarray
    regret_sub: Optional[np.ndarray]
    regret_inf: Optional[np.ndarray]
    regret_risk: Optional[np.ndarray]
    flag: bool
    flag_correct: bool
    seed: int
    elapsed: float = field(compare=False, default=0.0)

    @property
    def pull_counts(self) -> np.ndarray:
        return self.pulls_at[-1]

    def total_regret(self) -> np.ndarray:
        if self.regret_risk is not None:
            return self.regret_risk
        return self.regret_sub + self.regret_inf


def _resolve(spec, oracle):
    return oracle if oracle is not None else classify(spec)


def run_episode(
    spec: InstanceSpec,
    policy: str,
    params: dict,
    horizon: int,
    seed: int,
    oracle: Optional[InstanceOracle] = None,
) -> RunRecord:
    """Play ``horizon`` rounds of ``policy`` on ``spec``; deterministic in ``seed``."""
    T = int(horizon)
    K = spec.n_arms
    if T < K:
        raise ValueError("horizon must be at least the number of arms")
    oracle = _resolve(spec, oracle)
    pol = make_policy(policy, spec, T, params)
    streams = _ArmStreams(spec.arms, seed)
    cps = checkpoints(T)
    pulls_at = np.zeros((len(cps), K), dtype=np.int64)

    start = time.perf_counter()
    select, observe, draw = pol.select, pol.observe, streams.next
    ci, next_cp = 0, cps[0]
    for t in range(1, T + 1):
        k = select()
        observe(k, draw(k))
        if t == next_cp:
            pulls_at[ci] = pol.pulls
            ci += 1
            next_cp = cps[ci] if ci < len(cps) else -1
    flag = pol.feasibility_flag()
    elapsed = time.perf_counter() - start

    w = _gap_weights(oracle)
    regrets = {name: None if wt is None else pulls_at @ wt for name, wt in w.items()}
    return RunRecord(
        T, cps, pulls_at, regrets["sub"], regrets["inf"], regrets["risk"],
        bool(flag), bool(flag) == oracle.is_feasible, int(seed), elapsed,
    )


def fit_log_slope(t: Sequence[float], y: Sequence[float]) -> tuple:
    """Least-squares fit ``y ~ a + b log t``; returns ``(b, a, r2)``."""
    x = np.log(np.asarray(t, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return math.nan, math.nan, math.nan
    b, a = np.polyfit(x, y, 1)
    resid = y - (a + b * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else math.nan
    return float(b), float(a), r2


def _mean_se(a: np.ndarray):
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    mean = a.mean(axis=0)
    se = a.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


@dataclass
class AggregateReport:
    """Monte-Carlo summary of ``reps`` episodes at one horizon."""

    policy: str
    horizon: int
    reps: int
    base_seed: int
    fingerprint: str
    is_feasible: bool
    checkpoints: tuple
    mean_pulls: np.ndarray
    se_pulls: np.ndarray
    regret_mean: dict
    regret_se: dict
    flag_error_rate: float
    flag_error_se: float
    final_pulls: np.ndarray
    slope_fit: tuple
    bound_slack: Optional[tuple] = None

    @property
    def mean_final_pulls(self) -> np.ndarray:
        return self.mean_pulls[-1]

    @property
    def se_final_pulls(self) -> np.ndarray:
        return self.se_pulls[-1]

    def total_regret_mean(self) -> np.ndarray:
        if self.regret_mean.get("risk") is not None:
            return self.regret_mean["risk"]
        return self.regret_mean["sub"] + self.regret_mean["inf"]


def _aggregate(records: Sequence[RunRecord], policy, base_seed, oracle) -> AggregateReport:
    recs = sorted(records, key=lambda r: r.seed)
    stack = np.stack([r.pulls_at for r in recs])
    mean_pulls, se_pulls = _mean_se(stack)
    regret_mean, regret_se = {}, {}
    for name in ("sub", "inf", "risk"):
        vals = [getattr(r, f"regret_{name}") for r in recs]
        if vals[0] is None:
            regret_mean[name] = regret_se[name] = None
        else:
            regret_mean[name], regret_se[name] = _mean_se(np.stack(vals))
    errors = np.array([0.0 if r.flag_correct else 1.0 for r in recs])
    n = len(recs)
    rate = float(errors.mean())
    rate_se = float(errors.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    cps = recs[0].checkpoints
    total = (
        regret_mean["risk"] if regret_mean["risk"] is not None
        else regret_mean["sub"] + regret_mean["inf"]
    )
    half = len(cps) // 2
    slope = fit_log_slope(cps[half:], total[half:])
    return AggregateReport(
        policy, recs[0].horizon, n, base_seed, oracle.fingerprint, oracle.is_feasible,
        cps, mean_pulls, se_pulls, regret_mean, regret_se, rate, rate_se,
        stack[:, -1, :], slope,
    )


class EpisodeError(RuntimeError):
    """An episode raised; carries the offending seed and rep index."""

    def __init__(self, seed: int, rep: int, cause: str):
        super().__init__(f"episode failed at seed {seed} (rep {rep}): {cause}")
        self.seed, self.rep = seed, rep

    def __reduce__(self):
        return EpisodeError, (self.seed, self.rep, str(self).split(": ", 1)[-1])


def _run_batch(args):
    spec, policy, params, horizon, seeds, oracle, base_seed = args
    out = []
    for s in seeds:
        try:
            out.append(run_episode(spec, policy, params, horizon, s, oracle))
        except Exception as exc:
            raise EpisodeError(s, s - base_seed, f"{type(exc).__name__}: {exc}") from exc
    return out


def monte_carlo(
    spec: InstanceSpec,
    policy: str,
    params: dict,
    horizon: int,
    reps: int,
    base_seed: int = 0,
    workers: Optional[int] = None,
    bounds: Optional[TheoremBounds] = None,
    return_records: bool = False,
):
    """Run ``reps`` episodes with seeds ``base_seed + rep``.

    Results are identical for any ``workers``.  With ``bounds`` the report's
    ``bound_slack`` is filled in.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    oracle = classify(spec)
    seeds = [base_seed + r for r in range(reps)]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or reps == 1:
        records = _run_batch((spec, policy, params, horizon, seeds, oracle, base_seed))
    else:
        batches = [seeds[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = ex.map(_run_batch, [(spec, policy, params, horizon, b, oracle, base_seed)
                                           for b in batches])
            records = [r for part in parts for r in part]
    report = _aggregate(records, policy, base_seed, oracle)
    if bounds is not None:
        rows = compare_to_bounds(report, bounds, ht=(policy == "rclcb_ht"))
        report.bound_slack = tuple(r.slack for r in rows)
    if return_records:
        return report, sorted(records, key=lambda r: r.seed)
    return report


@dataclass(frozen=True)
class BoundRow:
    arm: int
    category: str
    mean_pulls: float
    se: float
    rhs: Optional[float]
    slack: Optional[float]
    violated: Optional[bool]


def compare_to_bounds(report: AggregateReport, bounds: TheoremBounds, ht: bool = False) -> list:
    """Per-arm empirical pulls against theorem right-hand sides.

    An arm is flagged violated when its mean pulls exceed the RHS by more
    than 3 standard errors.  ``ht`` selects the heavy-tail bounds.
    """
    if report.fingerprint != bounds.fingerprint:
        raise ValueError("instance fingerprint mismatch between report and bounds")
    if report.horizon != bounds.horizon:
        raise ValueError("horizon mismatch between report and bounds")
    rhs = bounds.rhs_ht() if ht else bounds.rhs
    rows = []
    for k, cat in enumerate(bounds.category):
        m = float(report.mean_final_pulls[k])
        se = float(report.se_final_pulls[k])
        r = rhs[k]
        if r is None:
            rows.append(BoundRow(k, cat, m, se, None, None, None))
        else:
            rows.append(BoundRow(k, cat, m, se, float(r), float(r) - m, m > r + 3 * se))
    return rows


@dataclass(frozen=True)
class TradeoffRow:
    horizon: int
    regret: float
    regret_se: float
    flag_error_feasible: float
    flag_error_infeasible: float

    @property
    def flag_error_total(self) -> float:
        return self.flag_error_feasible + self.flag_error_infeasible


@dataclass(frozen=True)
class TradeoffTable:
    rows: tuple
    reps: int = 0

    def regret_log_fit(self) -> tuple:
        """``(slope, intercept, r2)`` of regret against log T."""
        return fit_log_slope([r.horizon for r in self.rows], [r.regret for r in self.rows])

    def flag_error_loglog_slope(self) -> float:
        """Slope of log(total flag error) against log T.

        A horizon with no observed errors enters at the continuity-corrected
        rate ``1 / (2 reps)``; without ``reps`` such horizons are skipped.
        """
        floor = 0.5 / self.reps if self.reps else 0.0
        pts = [(r.horizon, max(r.flag_error_total, floor)) for r in self.rows]
        pts = [p for p in pts if p[1] > 0]
        if len(pts) < 2:
            return math.nan
        x = np.log([p[0] for p in pts])
        y = np.log([p[1] for p in pts])
        return float(np.polyfit(x, y, 1)[0])

    def nonincreasing_pairs(self) -> float:
        """Fraction of adjacent horizon pairs whose total flag error does not grow."""
        errs = [r.flag_error_total for r in self.rows]
        pairs = list(zip(errs, errs[1:]))
        if not pairs:
            return math.nan
        return sum(b <= a for a, b in pairs) / len(pairs)


def tradeoff_experiment(
    feasible_spec: InstanceSpec,
    infeasible_spec: InstanceSpec,
    policy: str,
    params: dict,
    horizons: Sequence[int],
    reps: int,
    base_seed: int = 0,
    workers: Optional[int] = None,
) -> TradeoffTable:
    """Regret on the feasible instance and flag errors on both, per horizon."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if feasible_spec.n_arms != infeasible_spec.n_arms:
        raise ValueError("instances must share the arm count")
    if feasible_spec.level != infeasible_spec.level:
        raise ValueError("instances must share the risk level")
    if not classify(feasible_spec).is_feasible or classify(infeasible_spec).is_feasible:
        raise ValueError("need one feasible and one infeasible instance")
    rows = []
    for T in horizons:
        f = monte_carlo(feasible_spec, policy, params, T, reps, base_seed, workers)
        i = monte_carlo(infeasible_spec, policy, params, T, reps, base_seed, workers)
        total = f.regret_mean["sub"][-1] + f.regret_mean["inf"][-1]
        se = math.hypot(f.regret_se["sub"][-1], f.regret_se["inf"][-1])
        rows.append(TradeoffRow(int(T), float(total), float(se), f.flag_error_rate,
                                i.flag_error_rate))
    return TradeoffTable(tuple(rows), int(reps))
