"""
RC-LCB on the three-arm Gaussian instances
==========================================

Runs the feasible, infeasible and deceiver presets at a reduced scale and
prints pull counts next to the finite-time upper bounds.
"""
from riskbandit.cli import parse_config
from riskbandit.instances import classify, theorem_bounds
from riskbandit.presets import preset
from riskbandit.risk_core import SubGaussianParams
from riskbandit.simulator import compare_to_bounds, monte_carlo

T, REPS = 5000, 20

for name in ("feasible3", "infeasible3", "deceiver"):
    cfg = parse_config(preset(name))
    spec, params = cfg.instance_spec(), cfg.policy_params()
    oracle = classify(spec)
    sg = SubGaussianParams(params["sigma"], params["d_big"], params["d_small"])
    bounds = theorem_bounds(oracle, sg, spec.level, T)
    rep = monte_carlo(spec, "rc_lcb", params, T, REPS)
    print(f"\n{name}: feasible={oracle.is_feasible}  flag error={rep.flag_error_rate:.3f}"
          f"  T*={bounds.t_star}")
    for row in compare_to_bounds(rep, bounds):
        rhs = "-" if row.rhs is None else f"{row.rhs:9.1f}"
        print(f"  arm {row.arm} {row.category:<22} pulls {row.mean_pulls:8.1f}  bound {rhs}")

# the mean-only baseline is fooled by the deceiver arm
cfg = parse_config(preset("deceiver"))
spec = cfg.instance_spec()
base = monte_carlo(spec, "baseline_lcb", {"sigma": 2.0}, T, REPS)
print("\nbaseline_lcb on the deceiver instance, mean pulls:", base.mean_final_pulls)
