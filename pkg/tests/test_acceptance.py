"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every test reports its measured quantities before asserting, so a failing
criterion still leaves a readable record in the test log.
"""
import math
import os
import time

import numpy as np
import pytest
from oracles import literal_cvar
from scipy import integrate, stats

from riskbandit.cli import parse_config, run_experiment
from riskbandit.instances import (
    Attribute,
    AttributeConstraint,
    Gaussian,
    Uniform,
    classify,
    con_lcb_bounds,
    theorem_bounds,
)
from riskbandit.lower_bounds import (
    GaussianClass,
    cvar_multiplier,
    eta_cvar_minimization,
    eta_feasible,
    eta_infeasible,
    kl_gaussian,
)
from riskbandit.policies import RCLCB, ConLCB, matched_cvar_rate, matched_mean_rate
from riskbandit.presets import preset
from riskbandit.risk_core import (
    MomentParams,
    RiskLevel,
    SubGaussianParams,
    cbs,
    empirical_cvar,
)
from riskbandit.simulator import (
    _ArmStreams,
    compare_to_bounds,
    fit_log_slope,
    monte_carlo,
    tradeoff_experiment,
)

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail, started):
        line = f"ACCEPTANCE {'PASS' if ok else 'FAIL'} | {name} | {detail} | {time.time() - started:.1f}s"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return emit


def load(name):
    cfg = parse_config(preset(name))
    spec = cfg.instance_spec()
    return cfg, spec, classify(spec), cfg.policy_params()


def sg_of(params):
    return SubGaussianParams(params["sigma"], params.get("d_big", 2.0), params["d_small"])


def bound_rows_ok(rows):
    return all(not r.violated for r in rows if r.rhs is not None)


def fmt_rows(rows):
    return ", ".join(
        f"arm{r.arm} {r.mean_pulls:.1f}±{r.se:.1f} vs {'-' if r.rhs is None else f'{r.rhs:.1f}'}"
        for r in rows
    )


def test_estimator_oracle_equivalence(verdict):
    t0 = time.time()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 201))
        alpha = float(rng.choice([0.9, 0.95, 0.99]))
        xs = (rng.standard_normal(n) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)).tolist()
        got, want = empirical_cvar(xs, alpha), literal_cvar(xs, alpha)
        worst = max(worst, abs(got - want) / (abs(want) or 1.0))
    elapsed = time.time() - t0
    ok = worst <= 1e-12 and elapsed < 10
    verdict("estimator oracle equivalence", ok,
            f"max relative error {worst:.2e} (limit 1e-12), runtime {elapsed:.2f}s (limit 10s)", t0)


def test_analytic_cvar_cross_check(verdict):
    t0 = time.time()
    lv = RiskLevel(0.95)
    closed = Gaussian(0.0, 1.0).cvar(lv)
    quad, _ = integrate.quad(lambda u: stats.norm.ppf(u), 0.95, 1.0, epsabs=1e-13, limit=200)
    quad /= 0.05
    u = Uniform(0.0, 1.0).cvar(lv)
    ok = abs(closed - quad) <= 1e-6 and abs(closed - 2.0627) < 1e-4 and u == (1 + 0.95) / 2
    verdict("analytic CVaR cross-check", ok,
            f"Gaussian closed {closed:.10f} vs quadrature {quad:.10f}; Uniform {u!r} vs {(1 + 0.95) / 2!r}",
            t0)


def test_feasible_bounds_and_log_growth(verdict):
    t0 = time.time()
    cfg, spec, oracle, params = load("feasible3")
    sg = sg_of(params)
    rep = monte_carlo(spec, "rc_lcb", params, 20_000, 200)
    rows = compare_to_bounds(rep, theorem_bounds(oracle, sg, spec.level, 20_000))
    ratios = {}
    for T in (2500, 5000, 10_000, 20_000):
        r = rep if T == 20_000 else monte_carlo(spec, "rc_lcb", params, T, 200)
        ratios[T] = float(r.mean_final_pulls[0]) / math.log(T)
    spread = max(ratios.values()) / min(ratios.values())
    ok = bound_rows_ok(rows) and spread <= 2.0 and time.time() - t0 < 300
    verdict("feasible-suboptimal bound and log growth", ok,
            f"{fmt_rows(rows)}; N_0/log T {', '.join(f'{v:.1f}' for v in ratios.values())} "
            f"spread {spread:.2f} (limit 2)", t0)


def test_deceiver_bound(verdict):
    t0 = time.time()
    cfg, spec, oracle, params = load("deceiver")
    dec = oracle.deceiver_set[0]
    rep = monte_carlo(spec, "rc_lcb", params, 20_000, 200)
    rows = compare_to_bounds(rep, theorem_bounds(oracle, sg_of(params), spec.level, 20_000))
    base = monte_carlo(spec, "baseline_lcb", {"sigma": params["sigma"]}, 20_000, 200)
    frac = float(base.mean_final_pulls[dec]) / 20_000
    ok = not rows[dec].violated and frac > 0.5
    verdict("deceiver bound", ok,
            f"deceiver arm{dec} {rows[dec].mean_pulls:.1f}±{rows[dec].se:.1f} vs RHS {rows[dec].rhs:.1f}; "
            f"baseline_lcb deceiver share {frac:.3f} (needs > 0.5)", t0)


def test_infeasible_behaviour(verdict):
    t0 = time.time()
    cfg, spec, oracle, params = load("infeasible3")
    T, reps, K = 20_000, 200, spec.n_arms
    bounds = theorem_bounds(oracle, sg_of(params), spec.level, T)
    rep = monte_carlo(spec, "rc_lcb", params, T, reps)
    best = oracle.optimal_set[0]
    frac = float(rep.mean_final_pulls[best]) / T
    p0 = K / T
    flag_limit = p0 + 3 * math.sqrt(p0 * (1 - p0) / reps)
    ok = T >= bounds.t_star and frac >= 0.9 and rep.flag_error_rate <= flag_limit
    verdict("infeasible-instance behaviour", ok,
            f"T* {bounds.t_star}; min-CVaR arm{best} share {frac:.3f} (needs >= 0.9); "
            f"flag error {rep.flag_error_rate:.4f} (limit {flag_limit:.4f})", t0)


def test_feasibility_flag_error(verdict):
    t0 = time.time()
    cfg, spec, oracle, params = load("feasible3")
    rep = monte_carlo(spec, "rc_lcb", params, 10_000, 200)
    ok = rep.flag_error_rate <= 0.02
    verdict("feasibility-flag error", ok,
            f"flag error {rep.flag_error_rate:.4f} ± {rep.flag_error_se:.4f} (limit 0.02)", t0)


def test_heavy_tail_bounds_and_log_growth(verdict):
    t0 = time.time()
    cfg, spec, oracle, params = load("heavy_tail")
    mp = MomentParams(params["p"], params["b_bound"])
    horizons = cfg.horizons()
    pulls, violations, details = {}, [], []
    for T in horizons:
        rep = monte_carlo(spec, "rclcb_ht", params, T, cfg.reps)
        rows = compare_to_bounds(rep, theorem_bounds(oracle, None, spec.level, T, mp=mp), ht=True)
        violations += [r.arm for r in rows if r.violated]
        pulls[T] = rep.mean_final_pulls
        details.append(f"T={T}: {fmt_rows(rows)}")
    non_opt = [k for k in range(spec.n_arms) if k not in oracle.optimal_set]
    r2 = {k: fit_log_slope(horizons, [pulls[T][k] for T in horizons])[2] for k in non_opt}
    prev, mono = math.inf, True
    for n in range(1, 1_000_001):
        c = cbs(n, spec.level, mp, horizons[-1])
        if not c < prev:
            mono = False
            break
        prev = c
    elapsed = time.time() - t0
    ok = not violations and all(v > 0.9 for v in r2.values()) and mono and elapsed < 600
    verdict("heavy-tail bounds", ok,
            f"{'; '.join(details)}; log-fit R2 "
            f"{', '.join(f'arm{k} {v:.3f}' for k, v in r2.items())} (needs > 0.9); "
            f"cbs strictly decreasing to 1e6: {mono}", t0)


def test_con_lcb_bounds_and_reduction(verdict):
    t0 = time.time()
    cfg, spec, oracle, params = load("con_lcb2")
    T = 20_000
    rep = monte_carlo(spec, "con_lcb", params, T, cfg.reps)
    rows = compare_to_bounds(rep, con_lcb_bounds(oracle, spec, T))
    cats = [oracle.category(k) for k in range(spec.n_arms)]
    inf_arm = cats.index("infeasible_suboptimal")
    doubly = all(g[inf_arm] > 0 for g in oracle.constraint_gaps)
    shape_ok = sorted(cats) == ["deceiver", "feasible_suboptimal", "infeasible_suboptimal",
                                "optimal"] and doubly
    # exact single-constraint reduction on a shared stream
    arms = [Gaussian(0.1, 1.0), Gaussian(0.0, 1.0), Gaussian(0.5, 1.0)]
    lv, sg, tau, Tr = RiskLevel(0.95), SubGaussianParams(1.0, 2.0, 32.0), 2.3, 1000
    cons = [AttributeConstraint(Attribute("cvar", matched_cvar_rate(sg, lv, Tr), 0.95), tau)]
    same = True
    for seed in range(5):
        seqs = []
        for pol in (RCLCB(3, Tr, tau, lv, sg),
                    ConLCB(3, Tr, cons, Attribute("mean", matched_mean_rate(1.0, Tr)))):
            streams, acts = _ArmStreams(arms, seed), []
            for _ in range(Tr):
                k = pol.select()
                pol.observe(k, streams.next(k))
                acts.append(k)
            seqs.append(acts)
        same &= seqs[0] == seqs[1]
    ok = shape_ok and bound_rows_ok(rows) and rep.flag_error_rate <= 0.02 and same
    verdict("Con-LCB bounds", ok,
            f"categories {cats}, arm{inf_arm} violates both constraints: {doubly}; {fmt_rows(rows)}; flag error {rep.flag_error_rate:.4f} "
            f"(limit 0.02); reduction identical over T={Tr}: {same}", t0)


def test_lower_bound_machinery(verdict):
    t0 = time.time()
    lv = RiskLevel(0.95)
    kappa = cvar_multiplier(lv)
    r = eta_feasible(Gaussian(0.1, 1.0), 0.0, math.inf, lv, GaussianClass.fixed(1.0))
    # admissible perturbations have mean <= mu* = 0 (closure of the open region)
    grid = np.linspace(-5, 0, 500_001)
    grid_eta = float(np.min(kl_gaussian(0.1, 1.0, grid, 1.0)))
    rel = abs(r.eta - grid_eta) / grid_eta
    rng = np.random.default_rng(11)
    mono = True
    for _ in range(20):
        mu, sigma = rng.uniform(-1, 1), rng.uniform(0.5, 2)
        mu_star = mu - rng.uniform(0.05, 0.5)
        cls = GaussianClass.fixed(sigma)
        tau = mu_star + sigma * kappa - rng.uniform(0.01, 1)
        mono &= (eta_feasible(Gaussian(mu, sigma), mu_star, tau, lv, cls).eta
                 >= eta_feasible(Gaussian(mu, sigma), mu_star, math.inf, lv, cls).eta)
    worst = 0.0
    for cls in (GaussianClass.fixed(1.0), GaussianClass.free(0.5, 2.0)):
        for mu, gap in [(0.0, 0.1), (0.5, 0.3), (-0.2, 0.8), (1.0, 0.05)]:
            arm = Gaussian(mu, 1.0)
            c = arm.cvar(lv) - gap
            worst = max(worst, abs(eta_infeasible(arm, c, lv, cls).eta
                                   - eta_cvar_minimization(arm, c, lv, cls).eta))
    ok = abs(r.eta - 0.005) / 0.005 <= 1e-4 and rel <= 1e-4 and mono and worst <= 1e-6
    verdict("lower-bound machinery", ok,
            f"eta_f {r.eta:.8f} vs grid {grid_eta:.8f} (rel {rel:.1e}); monotone on 20 points: {mono}; "
            f"max |eta_i - eta_cvar_min| {worst:.1e} (limit 1e-6)", t0)


def test_tradeoff_power_law(verdict):
    t0 = time.time()
    cfg = parse_config(preset("tradeoff3"))
    spec = cfg.instance_spec()
    table = tradeoff_experiment(spec, spec.with_tau(cfg.analysis.infeasible_tau), cfg.policy.name,
                                cfg.policy_params(), cfg.horizons(), cfg.reps, cfg.base_seed)
    slope = table.flag_error_loglog_slope()
    _, _, r2 = table.regret_log_fit()
    rows = "; ".join(f"T={r.horizon} regret {r.regret:.1f} flag err {r.flag_error_feasible:.3f}/"
                     f"{r.flag_error_infeasible:.3f}" for r in table.rows)
    ok = math.isfinite(slope) and abs(slope) <= 3 and r2 > 0.9
    verdict("tradeoff power law", ok,
            f"{rows}; log-log slope {slope:.2f} (|.| <= 3); regret vs log T R2 {r2:.3f} (> 0.9)", t0)


def test_determinism_sequential_vs_parallel(verdict, tmp_path, monkeypatch):
    t0 = time.time()
    outs = []
    for name, threads in (("seq", "1"), ("again", "1"), ("par", "2")):
        monkeypatch.setenv("RISKBANDIT_THREADS", threads)
        cfg = parse_config(preset("feasible3"), {"horizon": 2000, "reps": 16,
                                                  "out": str(tmp_path / name)})
        assert run_experiment(cfg, quiet=True) == 0
        d = tmp_path / name
        outs.append({f: (d / f).read_bytes() for f in sorted(os.listdir(d)) if f != "diagnostics.json"})
    ok = outs[0] == outs[1] == outs[2] and len(outs[0]) == 2
    verdict("determinism", ok, f"files {sorted(outs[0])} identical across 2 sequential and 1 "
            f"parallel run: {ok}", t0)
