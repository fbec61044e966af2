"""
Lower bounds and the regret / identification tradeoff
=====================================================

Asymptotic pull lower bounds for the Gaussian class, then a small
tradeoff sweep whose rows are written as plot-ready CSV.
"""
import sys

from riskbandit.cli import parse_config, tradeoff_csv_text
from riskbandit.instances import classify
from riskbandit.lower_bounds import GaussianClass, instance_etas, theorem4_lower_bound
from riskbandit.presets import preset
from riskbandit.simulator import tradeoff_experiment

cfg = parse_config(preset("feasible3"))
spec = cfg.instance_spec()
oracle = classify(spec)
for k, eta in enumerate(instance_etas(spec, oracle)):
    print(f"arm {k} {oracle.category(k):<22} eta {eta.eta:.4f}"
          f"  log(T)/eta at T=1e4: {theorem4_lower_bound(eta, 10**4):.1f}")

# a free-variance class can only lower eta
free = instance_etas(spec, oracle, GaussianClass.free(0.5, 2.0))
print("free-sigma etas:", [round(e.eta, 4) for e in free])

cfg = parse_config(preset("tradeoff3"), {"reps": 30})
spec = cfg.instance_spec()
table = tradeoff_experiment(spec, spec.with_tau(cfg.analysis.infeasible_tau), "rc_lcb",
                            cfg.policy_params(), cfg.horizons(), cfg.reps)
sys.stdout.write(tradeoff_csv_text(table))
print("regret vs log T (slope, intercept, R2):", table.regret_log_fit())
print("flag-error log-log slope:", table.flag_error_loglog_slope())
