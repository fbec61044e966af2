"""Risk-measure estimators and confidence widths.

Empirical and truncated VaR/CVaR, the truncated mean, the truncation
schedules used for heavy-tailed arms, and every confidence-width sequence
the policies rely on.  ``log`` is the natural logarithm throughout.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "SampleBuffer",
    "SubGaussianParams",
    "MomentParams",
    "RiskLevel",
    "tail_counts",
    "empirical_var",
    "empirical_cvar",
    "cvar_from_descending",
    "truncated_mean",
    "mean_trunc_level",
    "truncated_cvar",
    "cvar_width_subgauss",
    "mean_width_subgauss",
    "mean_width_ht",
    "cvar_trunc_level",
    "cvar_trunc_threshold",
    "cbs",
    "cbs_bias_plus_deviation",
    "var_magnitude_bound",
    "cvar_truncation_bias",
]

# nβ values within this relative distance of an integer are snapped to it,
# e.g. 100 * (1 - 0.95) = 5.000000000000004 must give ceil = 5.
_SNAP_RTOL = 1e-9


class SampleBuffer:
    """Loss samples of one arm, kept in arrival order and in sorted order.

    ``samples`` is the arrival-order record (truncated means index their
    truncation level by arrival position).  ``sorted_view`` gives the
    descending order statistics X_[1] >= X_[2] >= ... >= X_[n].
    """

    __slots__ = ("_samples", "_asc", "_sum")

    def __init__(self, samples: Iterable[float] = ()):
        self._samples: list[float] = [float(x) for x in samples]
        self._asc: list[float] = sorted(self._samples)
        self._sum = sum(self._samples)

    def append(self, x: float) -> None:
        x = float(x)
        self._samples.append(x)
        bisect.insort(self._asc, x)
        self._sum += x

    @property
    def count(self) -> int:
        return len(self._samples)

    def __len__(self) -> int:
        return len(self._samples)

    @property
    def samples(self) -> tuple[float, ...]:
        return tuple(self._samples)

    @property
    def sorted_view(self) -> list[float]:
        """Descending order statistics (a fresh list)."""
        return self._asc[::-1]

    def ascending(self) -> list[float]:
        # internal view, do not mutate
        return self._asc

    def arrival(self) -> list[float]:
        # internal view, do not mutate
        return self._samples

    def mean(self) -> float:
        if not self._samples:
            raise ValueError("no samples")
        return self._sum / len(self._samples)

    def __repr__(self) -> str:
        return f"SampleBuffer(n={self.count})"


BufferLike = Union[SampleBuffer, Sequence[float], np.ndarray]


def _as_buffer(buffer: BufferLike) -> SampleBuffer:
    if isinstance(buffer, SampleBuffer):
        return buffer
    return SampleBuffer(np.asarray(buffer, dtype=float).ravel().tolist())


@dataclass(frozen=True)
class SubGaussianParams:
    """Sub-Gaussian proxy ``sigma`` and the CVaR concentration constants.

    ``d_big`` and ``d_small`` play the roles of D_sigma and d_sigma in the
    tail bound ``2 D exp(-d n beta^2 eps^2)``.  When ``d_small`` is omitted it
    defaults to the conservative, level-free value ``1/(8 sigma^2)``; use
    :func:`riskbandit.calibration.calibrate_subgauss` for level-specific
    constants.
    """

    sigma: float
    d_big: float = 2.0
    d_small: float | None = None

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        if self.d_small is None:
            if self.sigma == 0:
                raise ValueError("d_small must be given when sigma == 0")
            object.__setattr__(self, "d_small", 1.0 / (8.0 * self.sigma**2))
        if not self.d_big > 0 or not self.d_small > 0:
            raise ValueError("d_big and d_small must be positive")


@dataclass(frozen=True)
class MomentParams:
    """Known moment bound E|X|^p <= B with p in (1, 2]."""

    p: float
    b_bound: float

    def __post_init__(self):
        if not 1.0 < self.p <= 2.0:
            raise ValueError("p must be in (1, 2]")
        if not self.b_bound > 0:
            raise ValueError("B must be positive")


@dataclass(frozen=True)
class RiskLevel:
    alpha: float
    beta: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        object.__setattr__(self, "beta", 1.0 - self.alpha)


def _level(level: RiskLevel | float) -> RiskLevel:
    return level if isinstance(level, RiskLevel) else RiskLevel(float(level))


def tail_counts(n: int, beta: float) -> tuple[float, int, int]:
    """Return ``(n*beta, floor(n*beta), ceil(n*beta))`` with integer snapping."""
    x = n * beta
    r = round(x)
    if abs(x - r) <= _SNAP_RTOL * max(1.0, x):
        return float(r), int(r), int(r)
    return x, math.floor(x), math.ceil(x)


def cvar_from_descending(desc: Sequence[float], n: int, beta: float) -> float:
    """Evaluate the order-statistic CVaR formula.

    ``desc`` must hold at least the ``ceil(n*beta)`` largest samples in
    descending order.
    """
    nb, lo, hi = tail_counts(n, beta)
    pivot = desc[hi - 1]
    if lo == 0:
        return pivot
    excess = math.fsum(desc[i] - pivot for i in range(lo))
    return pivot + excess / nb


def empirical_var(buffer: BufferLike, level: RiskLevel | float) -> float:
    """The ``ceil(n*beta)``-th largest sample."""
    buf = _as_buffer(buffer)
    n = buf.count
    if n == 0:
        raise ValueError("no samples")
    _, _, hi = tail_counts(n, _level(level).beta)
    return buf.ascending()[n - hi]


def _top_desc(buf: SampleBuffer, k: int) -> list[float]:
    asc = buf.ascending()
    return asc[: len(asc) - k - 1 : -1] if k < len(asc) else asc[::-1]


def empirical_cvar(buffer: BufferLike, level: RiskLevel | float) -> float:
    """Empirical CVaR from the descending order statistics.

    >>> empirical_cvar([1, 2, 3, 4, 5], 0.6)
    4.5
    """
    beta = _level(level).beta
    if not isinstance(buffer, SampleBuffer):
        x = np.asarray(buffer, dtype=float).ravel()
        n = x.size
        if n == 0:
            raise ValueError("no samples")
        _, _, hi = tail_counts(n, beta)
        top = np.sort(np.partition(x, n - hi)[n - hi:])[::-1]
        return cvar_from_descending(top.tolist(), n, beta)
    n = buffer.count
    if n == 0:
        raise ValueError("no samples")
    _, _, hi = tail_counts(n, beta)
    return cvar_from_descending(_top_desc(buffer, hi), n, beta)


def mean_trunc_level(i: int | np.ndarray, params: MomentParams, delta: float):
    """Truncation level ``(B i / log(2/delta))^(1/p)`` for the i-th arrival."""
    return (params.b_bound * np.asarray(i, dtype=float) / math.log(2.0 / delta)) ** (
        1.0 / params.p
    )


def truncated_mean(
    buffer: BufferLike,
    params: MomentParams,
    delta: float,
    levels: Sequence[float] | None = None,
) -> float:
    """Truncated empirical average.

    Sample i (1-based arrival index) contributes only when ``|X_i| <= b_i``.
    ``levels`` overrides the default schedule :func:`mean_trunc_level`.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    buf = _as_buffer(buffer)
    n = buf.count
    if n == 0:
        raise ValueError("no samples")
    x = np.asarray(buf.arrival(), dtype=float)
    if levels is None:
        b = mean_trunc_level(np.arange(1, n + 1), params, delta)
    else:
        b = np.asarray(levels, dtype=float)
        if b.shape != (n,):
            raise ValueError("need one truncation level per sample")
    return float(np.sum(np.where(np.abs(x) <= b, x, 0.0)) / n)


def truncated_cvar(buffer: BufferLike, level: RiskLevel | float, b_c: float) -> float:
    """Empirical CVaR of the samples clamped to ``[-b_c, b_c]``.

    Clamping is monotone, so the clamped order statistics are the clamped
    original order statistics and only the top ``ceil(n*beta)`` are needed.
    """
    if not b_c > 0:
        raise ValueError("b_c must be positive")
    buf = _as_buffer(buffer)
    n = buf.count
    if n == 0:
        raise ValueError("no samples")
    beta = _level(level).beta
    _, _, hi = tail_counts(n, beta)
    top = [min(max(x, -b_c), b_c) for x in _top_desc(buf, hi)]
    return cvar_from_descending(top, n, beta)


def cvar_width_subgauss(
    n: int, level: RiskLevel | float, sg: SubGaussianParams, horizon: int, k_arms: int = 1
) -> float:
    """``(1/beta) sqrt(log(2 D K T^2) / (n d))``; ``k_arms=1`` is the listed form."""
    beta = _level(level).beta
    return math.sqrt(math.log(2.0 * sg.d_big * k_arms * horizon**2) / (n * sg.d_small)) / beta


def mean_width_subgauss(n: int, sigma: float, horizon: int) -> float:
    return sigma * math.sqrt(2.0 * math.log(horizon**2) / n)


def mean_width_ht(n: int, params: MomentParams, horizon: int) -> float:
    p = params.p
    return 4.0 * params.b_bound ** (1.0 / p) * (math.log(2.0 * horizon**2) / n) ** ((p - 1.0) / p)


def _check_ht_level(beta: float) -> None:
    if beta > 0.5:
        raise ValueError("heavy-tail schedule requires alpha > 0.5")


def cvar_trunc_threshold(level: RiskLevel | float, params: MomentParams, delta: float) -> float:
    """Real crossover ``44 log(6/delta) / (beta^3 (p-1)^2)`` of the two schedule branches."""
    beta = _level(level).beta
    return 44.0 * math.log(6.0 / delta) / (beta**3 * (params.p - 1.0) ** 2)


def cvar_trunc_level(
    n: float, level: RiskLevel | float, params: MomentParams, delta: float
) -> float:
    """CVaR truncation level ``b_{c,n}``.

    Equal to ``(B/beta)^(1/p)`` up to the crossover and to
    ``(B (p-1) sqrt(n beta) / sqrt(44 log(6/delta)))^(1/p)`` after it, i.e.
    the maximum of the two.
    """
    beta = _level(level).beta
    _check_ht_level(beta)
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    B, p = params.b_bound, params.p
    small = B / beta
    large = B * (p - 1.0) * math.sqrt(n * beta) / math.sqrt(44.0 * math.log(6.0 / delta))
    return max(small, large) ** (1.0 / p)


def cbs_bias_plus_deviation(
    n: int, level: RiskLevel | float, params: MomentParams, horizon: int
) -> float:
    """Truncation bias plus deviation, ``B/b^(p-1) + b sqrt(44 log(6T^2)/(n beta))``."""
    beta = _level(level).beta
    delta = 1.0 / horizon**2
    b = cvar_trunc_level(n, level, params, delta)
    return params.b_bound / b ** (params.p - 1.0) + b * math.sqrt(
        44.0 * math.log(6.0 * horizon**2) / (n * beta)
    )


def cbs(n: int, level: RiskLevel | float, params: MomentParams, horizon: int) -> float:
    """Closed-form two-branch CVaR confidence width for truncated estimates."""
    beta = _level(level).beta
    _check_ht_level(beta)
    B, p = params.b_bound, params.p
    log_term = 44.0 * math.log(6.0 * horizon**2)
    if n <= cvar_trunc_threshold(level, params, 1.0 / horizon**2):
        return B ** (1.0 / p) * beta ** (1.0 - 1.0 / p) + B ** (1.0 / p) * math.sqrt(
            log_term
        ) / (beta ** ((2.0 + p) / (2.0 * p)) * math.sqrt(n))
    return (
        B ** (1.0 / p)
        * (log_term / (n * beta)) ** ((p - 1.0) / (2.0 * p))
        * p
        / (p - 1.0) ** ((p - 1.0) / p)
    )


def var_magnitude_bound(params: MomentParams, level: RiskLevel | float) -> float:
    lv = _level(level)
    return (params.b_bound / min(lv.alpha, lv.beta)) ** (1.0 / params.p)


def cvar_truncation_bias(
    params: MomentParams, b_c: float, level: RiskLevel | float | None = None
) -> float:
    """Upper bound ``B / b_c^(p-1)`` on CVaR lost by clamping at ``b_c``.

    With ``level`` given, ``b_c`` is checked against the VaR magnitude bound.
    """
    if level is not None and not b_c > var_magnitude_bound(params, level):
        raise ValueError("truncation below VaR magnitude bound")
    if not b_c > 0:
        raise ValueError("b_c must be positive")
    return params.b_bound / b_c ** (params.p - 1.0)
