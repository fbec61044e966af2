"""
Risk estimators in a few lines
==============================

Empirical CVaR, the sub-Gaussian confidence widths, and the truncated
estimators used when only a p-th moment is bounded.
"""
import numpy as np

from riskbandit.instances import Gaussian, ShiftedPareto
from riskbandit.risk_core import (
    MomentParams,
    RiskLevel,
    SampleBuffer,
    SubGaussianParams,
    cbs,
    cvar_trunc_level,
    cvar_width_subgauss,
    empirical_cvar,
    empirical_var,
    truncated_cvar,
    truncated_mean,
)

level = RiskLevel(0.95)
rng = np.random.default_rng(0)

# CVaR of a standard Gaussian: closed form vs the order-statistic estimator
arm = Gaussian(0.0, 1.0)
print("true CVaR_0.95 of N(0,1):", arm.cvar(level))
for n in (100, 1000, 10000, 100000):
    x = arm.sample(rng, n)
    print(f"  n={n:>6}  VaR {empirical_var(x, level):.4f}  CVaR {empirical_cvar(x, level):.4f}")

# the width shrinks like 1/sqrt(n) and grows only with log T
sg = SubGaussianParams(1.0, 2.0, 32.0)
for n in (10, 100, 1000):
    print(f"CVaR width at n={n:>4}, T=1e4:", round(cvar_width_subgauss(n, level, sg, 10**4), 4))

# heavy tails: Pareto with shape 3 has a finite 1.5-th moment
pareto = ShiftedPareto(3.0, 1.0, -1.0)
mp = MomentParams(1.5, 2.0)
delta = 1.0 / 20000**2
x = pareto.sample(rng, 5000)
buf = SampleBuffer(x)
print("Pareto mean", pareto.mean(), "truncated estimate", truncated_mean(buf, mp, delta))
b_c = cvar_trunc_level(len(x), level, mp, delta)
print("Pareto CVaR", pareto.cvar(level), "clamped at", round(b_c, 2), "estimate",
      truncated_cvar(buf, level, b_c))

# the heavy-tail confidence sequence is strictly decreasing in n
seq = [cbs(n, level, mp, 20000) for n in (1, 10, 100, 1000, 10000)]
print("cbs(n) at n = 1, 10, ..., 1e4:", np.round(seq, 3))
