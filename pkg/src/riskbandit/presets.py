"""Ready-made experiment configurations.

The sub-Gaussian CVaR constants below come from
``calibrate_subgauss(1.0, alpha, reps=20000)`` (d = 32.08 at alpha=0.95 and
13.21 at alpha=0.9), rounded down, then scaled by 1/sigma^2 for the
instance's largest sigma.
"""
from __future__ import annotations

import copy

__all__ = ["PRESETS", "preset", "D_SMALL_UNIT", "d_small_for"]

# calibrated d for a unit-variance Gaussian arm, keyed by alpha
D_SMALL_UNIT = {0.9: 13.2, 0.95: 32.0}


def d_small_for(sigma: float, alpha: float) -> float:
    return D_SMALL_UNIT[alpha] / sigma**2


def _gauss(mu, sigma, label=""):
    d = {"kind": "gaussian", "mu": mu, "sigma": sigma}
    if label:
        d["label"] = label
    return d


_THREE_ARMS = [_gauss(0.1, 1.0, "a"), _gauss(0.0, 1.0, "b"), _gauss(0.5, 1.0, "c")]
_RC_PARAMS = {"sigma": 1.0, "d_big": 2.0, "d_small": d_small_for(1.0, 0.95)}

PRESETS = {
    "feasible3": {
        "instance": {"level": 0.95, "tau": 2.3, "arms": _THREE_ARMS},
        "policy": {"name": "rc_lcb", **_RC_PARAMS},
        "horizon": 20000,
        "reps": 200,
        "base_seed": 0,
        "analysis": {"bounds": True, "lower_bounds": True},
    },
    "infeasible3": {
        "instance": {"level": 0.95, "tau": 1.0, "arms": _THREE_ARMS},
        "policy": {"name": "rc_lcb", **_RC_PARAMS},
        "horizon": 20000,
        "reps": 200,
        "base_seed": 0,
        "analysis": {"bounds": True, "lower_bounds": True},
    },
    "deceiver": {
        "instance": {
            "level": 0.95,
            "tau": 2.5,
            "arms": [_gauss(-0.5, 2.0, "deceiver"), _gauss(0.0, 1.0, "safe")],
        },
        "policy": {"name": "rc_lcb", "sigma": 2.0, "d_big": 2.0,
                   "d_small": d_small_for(2.0, 0.95)},
        "horizon": 20000,
        "reps": 200,
        "base_seed": 0,
        "analysis": {"bounds": True, "lower_bounds": True},
    },
    "heavy_tail": {
        "instance": {
            "level": 0.95,
            "tau": 10.0,
            "arms": [
                {"kind": "shifted_pareto", "shape": 3.0, "scale": 1.0, "shift": -1.0},
                {"kind": "shifted_pareto", "shape": 3.0, "scale": 1.0, "shift": 0.5},
                {"kind": "shifted_pareto", "shape": 3.0, "scale": 1.0, "shift": 1.0},
            ],
        },
        # max_k E|X(k)|^1.5 = 2.0 (quadrature)
        "policy": {"name": "rclcb_ht", "p": 1.5, "b_bound": 2.0},
        "horizon": [5000, 10000, 20000],
        "reps": 200,
        "base_seed": 0,
        "analysis": {"bounds": True},
    },
    "con_lcb2": {
        # arm 0 optimal, 1 feasible-suboptimal, 2 deceiver, 3 violates both constraints
        "instance": {
            "level": 0.95,
            "arms": [_gauss(0.0, 1.0), _gauss(0.4, 0.8), _gauss(-0.5, 2.0), _gauss(1.0, 1.5)],
            "objective": {"kind": "mean", "rate": 1.0 / (2 * 2.0**2)},
            "constraints": [
                {"kind": "cvar", "alpha": 0.9, "threshold": 2.0,
                 "rate": d_small_for(2.0, 0.9) * 0.1**2},
                {"kind": "cvar", "alpha": 0.95, "threshold": 3.0,
                 "rate": d_small_for(2.0, 0.95) * 0.05**2},
            ],
        },
        "policy": {"name": "con_lcb"},
        "horizon": 20000,
        "reps": 200,
        "base_seed": 0,
        "analysis": {"bounds": True},
    },
    "tradeoff3": {
        "instance": {"level": 0.95, "tau": 2.3, "arms": _THREE_ARMS},
        "policy": {"name": "rc_lcb", **_RC_PARAMS},
        "horizon": [1000, 4000, 16000],
        "reps": 200,
        "base_seed": 0,
        # infeasible partner: same arms, tau 0.3 below the smallest CVaR, where
        # identification flips from mostly wrong to right inside the grid
        "analysis": {"tradeoff": True, "infeasible_tau": 1.7627},
    },
}


def preset(name: str) -> dict:
    """A deep copy of the named preset configuration document."""
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
