"""Config-driven experiment runner and result serializers.

Usage::

    riskbandit --config experiment.yaml --out results/
    riskbandit --preset feasible3 --reps 50 --horizon 5000

Exit codes: 0 success, 2 config error, 3 runtime error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from typing import Annotated, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .instances import (
    InstanceSpec,
    arm_from_dict,
    classify,
    con_lcb_bounds,
    instance_from_dict,
    theorem_bounds,
)
from .lower_bounds import instance_etas, theorem4_lower_bound
from .presets import PRESETS, preset
from .risk_core import MomentParams, SubGaussianParams
from .simulator import (
    AggregateReport,
    EpisodeError,
    RunRecord,
    compare_to_bounds,
    monte_carlo,
    tradeoff_experiment,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "run_experiment",
    "emit_csv",
    "emit_summary",
    "csv_text",
    "summary_document",
    "main",
]

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    """All validation problems of one configuration document."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


# ---------------------------------------------------------------------------
# schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class ConstantArm(_Strict):
    kind: Literal["constant"]
    value: float
    label: str = ""


class GaussianArm(_Strict):
    kind: Literal["gaussian"]
    mu: float
    sigma: float
    label: str = ""


class UniformArm(_Strict):
    kind: Literal["uniform"]
    lo: float
    hi: float
    label: str = ""


class ParetoArm(_Strict):
    kind: Literal["shifted_pareto"]
    shape: float
    scale: float = 1.0
    shift: float = 0.0
    label: str = ""


class DiscreteArm(_Strict):
    kind: Literal["discrete"]
    values: List[float]
    probabilities: List[float]
    label: str = ""


ScalarArm = Annotated[
    Union[ConstantArm, GaussianArm, UniformArm, ParetoArm, DiscreteArm],
    Field(discriminator="kind"),
]


class VectorArmConfig(_Strict):
    kind: Literal["vector"]
    components: List[ScalarArm]
    label: str = ""


ArmConfig = Annotated[
    Union[ConstantArm, GaussianArm, UniformArm, ParetoArm, DiscreteArm, VectorArmConfig],
    Field(discriminator="kind"),
]


class AttributeConfig(_Strict):
    kind: Literal["mean", "cvar"] = "mean"
    rate: float = 1.0
    alpha: Optional[float] = None
    coordinate: int = 0


class ConstraintConfig(AttributeConfig):
    threshold: float


class InstanceConfig(_Strict):
    level: float = 0.95
    tau: Optional[float] = None
    arms: List[ArmConfig]
    objective: Optional[AttributeConfig] = None
    constraints: Optional[List[ConstraintConfig]] = None


class PolicyConfig(_Strict):
    name: Literal["rc_lcb", "rclcb_ht", "con_lcb", "baseline_lcb", "baseline_cvar_lcb"]
    sigma: Optional[float] = None
    d_big: float = 2.0
    d_small: Optional[float] = None
    k_inflated: bool = False
    p: Optional[float] = None
    b_bound: Optional[float] = None


class OutputsConfig(_Strict):
    dir: str = "riskbandit-out"
    csv: bool = True
    summary: bool = True


class AnalysisConfig(_Strict):
    bounds: bool = True
    lower_bounds: bool = False
    tradeoff: bool = False
    infeasible_tau: Optional[float] = None


class ExperimentConfig(_Strict):
    instance: InstanceConfig
    policy: PolicyConfig
    horizon: Union[int, List[int]]
    reps: int = Field(1, ge=1)
    base_seed: int = Field(0, ge=0)
    outputs: OutputsConfig = Field(default_factory=OutputsConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)

    def horizons(self) -> List[int]:
        return list(self.horizon) if isinstance(self.horizon, list) else [self.horizon]

    def instance_spec(self) -> InstanceSpec:
        return instance_from_dict(self.instance.model_dump(exclude_none=True))

    def policy_params(self) -> dict:
        d = self.policy.model_dump(exclude_none=True)
        d.pop("name")
        return d


# ---------------------------------------------------------------------------
# parsing


def _loc(parts) -> str:
    out = ""
    for p in parts:
        if isinstance(p, int):
            out += f"[{p}]"
        else:
            out += ("." if out else "") + str(p)
    return out or "<root>"


def _pydantic_errors(exc: ValidationError) -> List[str]:
    msgs = []
    for e in exc.errors():
        # drop union-tag segments such as 'gaussian' that pydantic inserts
        loc = [p for p in e["loc"] if not (isinstance(p, str) and p in _ARM_KINDS)]
        kind = e["type"]
        if kind == "extra_forbidden":
            msg = "unknown key"
        elif kind == "missing":
            msg = "missing required key"
        else:
            msg = e["msg"]
        msgs.append(f"{_loc(loc)}: {msg}")
    return msgs


_ARM_KINDS = {"constant", "gaussian", "uniform", "shifted_pareto", "discrete", "vector",
              "int", "list[int]"}


def _semantic_errors(doc: dict) -> List[str]:
    """Cross-field checks; tolerant of a structurally invalid document."""
    errs = []
    inst = doc.get("instance") if isinstance(doc.get("instance"), dict) else {}
    pol = doc.get("policy") if isinstance(doc.get("policy"), dict) else {}
    ana = doc.get("analysis") if isinstance(doc.get("analysis"), dict) else {}
    name = pol.get("name")
    arms = inst.get("arms") if isinstance(inst.get("arms"), list) else []

    has_tau = inst.get("tau") is not None
    has_cons = inst.get("constraints") is not None
    if has_tau and has_cons:
        errs.append("instance: choose single-constraint or multi-constraint mode")
    elif not has_tau and not has_cons:
        errs.append("instance.tau: missing required key (or give instance.constraints)")

    alpha = inst.get("level", 0.95)
    if isinstance(alpha, (int, float)) and not 0.0 < alpha < 1.0:
        errs.append("instance.level: alpha must be in (0, 1)")

    for i, a in enumerate(arms):
        if isinstance(a, dict):
            try:
                arm_from_dict(a)
            except (TypeError, KeyError):
                pass  # structural problems are reported by the schema
            except ValueError as exc:
                errs.append(f"instance.arms[{i}]: {exc}")

    if name == "con_lcb" and has_tau and not has_cons:
        errs.append("policy.name: con_lcb needs instance.constraints")
    if name not in (None, "con_lcb") and has_cons and not has_tau:
        errs.append(f"policy.name: {name} needs instance.tau")
    if name in ("rc_lcb", "baseline_lcb", "baseline_cvar_lcb") and pol.get("sigma") is None:
        errs.append("policy.sigma: missing required key")
    if isinstance(pol.get("sigma"), (int, float)) and not pol["sigma"] > 0:
        errs.append("policy.sigma: sigma must be positive")
    if isinstance(pol.get("d_small"), (int, float)) and not pol["d_small"] > 0:
        errs.append("policy.d_small: must be positive")
    if name == "rclcb_ht":
        p, b = pol.get("p"), pol.get("b_bound")
        if p is None:
            errs.append("policy.p: missing required key")
        elif isinstance(p, (int, float)) and not 1.0 < p <= 2.0:
            errs.append("policy.p: p must be in (1, 2]")
        if b is None:
            errs.append("policy.b_bound: missing required key")
        elif isinstance(b, (int, float)) and not b > 0:
            errs.append("policy.b_bound: B must be positive")
        if isinstance(alpha, (int, float)) and 1.0 - alpha > 0.5:
            errs.append("instance.level: rclcb_ht requires beta = 1 - alpha <= 0.5")

    hs = doc.get("horizon")
    hs = hs if isinstance(hs, list) else [hs]
    for j, T in enumerate(hs):
        if isinstance(T, int) and arms and T < len(arms):
            where = "horizon" if len(hs) == 1 and not isinstance(doc.get("horizon"), list) \
                else f"horizon[{j}]"
            errs.append(f"{where}: T = {T} is smaller than the number of arms K = {len(arms)}")

    if ana.get("tradeoff"):
        if ana.get("infeasible_tau") is None:
            errs.append("analysis.infeasible_tau: required in tradeoff mode")
        if name == "con_lcb" or has_cons:
            errs.append("analysis.tradeoff: needs a single-constraint instance")
    return errs


def parse_config(text: Union[str, dict], overrides: Optional[dict] = None) -> ExperimentConfig:
    """Validate a YAML (or JSON) document; raise ConfigError listing every problem."""
    if isinstance(text, dict):
        doc = text
    else:
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError([f"<root>: not a valid YAML document ({exc})"]) from None
    if not isinstance(doc, dict):
        raise ConfigError(["<root>: expected a mapping"])
    doc = json.loads(json.dumps(doc))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key == "out":
            doc.setdefault("outputs", {})
            if isinstance(doc["outputs"], dict):
                doc["outputs"]["dir"] = val
        else:
            doc[key] = val
    errors = []
    cfg = None
    try:
        cfg = ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        errors.extend(_pydantic_errors(exc))
    errors.extend(_semantic_errors(doc))
    if errors:
        raise ConfigError(errors)
    try:
        cfg.instance_spec()
    except Exception as exc:
        raise ConfigError([f"instance: {exc}"]) from None
    return cfg


# ---------------------------------------------------------------------------
# serialization


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def csv_text(obj: Union[AggregateReport, RunRecord]) -> str:
    """Per-checkpoint trajectory table; columns are stable, arms 0-based."""
    if isinstance(obj, RunRecord):
        pulls = obj.pulls_at
        pulls_se = None
        regrets = {n: (getattr(obj, f"regret_{n}"), None) for n in ("sub", "inf", "risk")}
    else:
        pulls, pulls_se = obj.mean_pulls, obj.se_pulls
        regrets = {n: (obj.regret_mean[n], obj.regret_se[n]) for n in ("sub", "inf", "risk")}
    K = pulls.shape[1] if getattr(pulls, "ndim", 0) == 2 else 0
    header = ["t"] + [f"pulls_mean_{k}" for k in range(K)] + [f"pulls_se_{k}" for k in range(K)]
    for n in ("sub", "inf", "risk"):
        header += [f"regret_{n}_mean", f"regret_{n}_se"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i, t in enumerate(obj.checkpoints):
        row = [str(int(t))]
        row += [_fmt(v) for v in pulls[i]]
        row += [_fmt(0.0 if pulls_se is None else v) for v in (pulls_se[i] if pulls_se is not None
                                                               else pulls[i])]
        for n in ("sub", "inf", "risk"):
            m, se = regrets[n]
            if m is None:
                row += ["", ""]
            else:
                row += [_fmt(m[i]), _fmt(0.0 if se is None else se[i])]
        w.writerow(row)
    return buf.getvalue()


def tradeoff_csv_text(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["horizon", "regret", "regret_se", "flag_error_feasible", "flag_error_infeasible"])
    for r in table.rows:
        w.writerow([str(r.horizon), _fmt(r.regret), _fmt(r.regret_se),
                    _fmt(r.flag_error_feasible), _fmt(r.flag_error_infeasible)])
    return buf.getvalue()


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "tolist"):
        return _clean(x.tolist())
    if isinstance(x, bool) or x is None or isinstance(x, (int, str)):
        return x
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    return x


def _run_section(report: AggregateReport, bounds, eta_results, oracle) -> dict:
    K = report.mean_final_pulls.shape[0]
    rows = None
    if bounds is not None:
        rows = compare_to_bounds(report, bounds, ht=(bounds.family == "heavy_tail"))
    arms = []
    for k in range(K):
        row = rows[k] if rows else None
        eta = None
        if eta_results is not None:
            e = eta_results[k]
            eta = {**e.to_dict(), "lower_bound": theorem4_lower_bound(e, report.horizon)}
        arms.append({
            "arm": k,
            "category": oracle.category(k),
            "mean_pulls": float(report.mean_final_pulls[k]),
            "se_pulls": float(report.se_final_pulls[k]),
            "rhs": row.rhs if row else None,
            "slack": row.slack if row else None,
            "violated": row.violated if row else None,
            "lower_bound": eta,
        })
    regret = {}
    for n in ("sub", "inf", "risk"):
        m = report.regret_mean[n]
        regret[n] = None if m is None else {"mean": float(m[-1]), "se": float(report.regret_se[n][-1])}
    slope, intercept, r2 = report.slope_fit
    return {
        "horizon": int(report.horizon),
        "reps": int(report.reps),
        "t_star": None if bounds is None else bounds.t_star,
        "arms": arms,
        "flag": {"error_rate": report.flag_error_rate, "error_se": report.flag_error_se},
        "regret": regret,
        "slope_fit": {"slope": slope, "intercept": intercept, "r2": r2},
    }


def summary_document(policy: str, base_seed: int, oracle, runs: list, config: Optional[dict] = None,
                     tradeoff: Optional[dict] = None) -> dict:
    return _clean({
        "tool": "riskbandit",
        "version": __version__,
        "base_seed": int(base_seed),
        "policy": policy,
        "fingerprint": oracle.fingerprint,
        "config": config or {},
        "oracle": oracle.to_dict(),
        "runs": runs,
        "tradeoff": tradeoff,
    })


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _atomic_write_many(files: dict) -> None:
    """Write ``{path: text}`` so that either every file lands or none does."""
    temps = []
    try:
        for path, text in files.items():
            d = os.path.dirname(os.path.abspath(path))
            fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
            temps.append((tmp, path))
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        for tmp, path in temps:
            os.replace(tmp, path)
    except BaseException:
        for tmp, _ in temps:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


def emit_csv(obj: Union[AggregateReport, RunRecord], path: str) -> None:
    _atomic_write_many({path: csv_text(obj)})


def emit_summary(report: AggregateReport, bounds, eta_results, path: str, oracle=None,
                 config: Optional[dict] = None) -> dict:
    """Write a one-run summary document; returns it."""
    if oracle is None:
        raise ValueError("emit_summary needs the instance oracle")
    doc = summary_document(report.policy, report.base_seed, oracle,
                           [_run_section(report, bounds, eta_results, oracle)], config)
    _atomic_write_many({path: _dump_json(doc)})
    return doc


# ---------------------------------------------------------------------------
# orchestration


def _bounds_for(cfg: ExperimentConfig, spec, oracle, T):
    if not cfg.analysis.bounds:
        return None
    pol = cfg.policy
    if pol.name == "con_lcb":
        return con_lcb_bounds(oracle, spec, T)
    if pol.name == "rclcb_ht":
        return theorem_bounds(oracle, None, spec.level, T, mp=MomentParams(pol.p, pol.b_bound))
    sg = SubGaussianParams(pol.sigma, pol.d_big, pol.d_small)
    return theorem_bounds(oracle, sg, spec.level, T, k_inflated=pol.k_inflated)


def _print_run(run: dict, out) -> None:
    print(f"T = {run['horizon']}  reps = {run['reps']}  "
          f"flag error = {run['flag']['error_rate']:.4f}", file=out)
    print(f"  {'arm':>3}  {'category':<22}{'pulls':>12}{'se':>10}{'bound':>14}{'slack':>14}",
          file=out)
    for a in run["arms"]:
        rhs = "-" if a["rhs"] is None else f"{a['rhs']:.1f}"
        slack = "-" if a["slack"] is None else f"{a['slack']:.1f}"
        flag = "  VIOLATED" if a["violated"] else ""
        print(f"  {a['arm']:>3}  {a['category']:<22}{a['mean_pulls']:>12.1f}{a['se_pulls']:>10.2f}"
              f"{rhs:>14}{slack:>14}{flag}", file=out)
    for n, v in run["regret"].items():
        if v is not None:
            print(f"  regret_{n} at T: {v['mean']:.2f} (se {v['se']:.2f})", file=out)


def run_experiment(cfg: ExperimentConfig, quiet: bool = False, workers: Optional[int] = None,
                   out=None) -> int:
    """Run every configured horizon and write outputs; returns an exit status."""
    out = out or sys.stdout
    try:
        spec = cfg.instance_spec()
        oracle = classify(spec)
        params = cfg.policy_params()
        name = cfg.policy.name
        echo = {k: v for k, v in cfg.to_dict().items() if k != "outputs"}
        files, diagnostics, runs, tradeoff = {}, {"elapsed_seconds": {}}, [], None
        outdir = cfg.outputs.dir

        if cfg.analysis.tradeoff:
            inf_spec = spec.with_tau(cfg.analysis.infeasible_tau)
            table = tradeoff_experiment(spec, inf_spec, name, params, cfg.horizons(), cfg.reps,
                                        cfg.base_seed, workers)
            slope, intercept, r2 = table.regret_log_fit()
            tradeoff = {
                "infeasible_tau": cfg.analysis.infeasible_tau,
                "rows": [{"horizon": r.horizon, "regret": r.regret, "regret_se": r.regret_se,
                          "flag_error_feasible": r.flag_error_feasible,
                          "flag_error_infeasible": r.flag_error_infeasible} for r in table.rows],
                "regret_log_fit": {"slope": slope, "intercept": intercept, "r2": r2},
                "flag_error_loglog_slope": table.flag_error_loglog_slope(),
                "nonincreasing_pairs": table.nonincreasing_pairs(),
            }
            if cfg.outputs.csv:
                files[os.path.join(outdir, "tradeoff.csv")] = tradeoff_csv_text(table)
        else:
            etas = instance_etas(spec, oracle) if cfg.analysis.lower_bounds else None
            for T in cfg.horizons():
                report, records = monte_carlo(spec, name, params, T, cfg.reps, cfg.base_seed,
                                              workers, return_records=True)
                bounds = _bounds_for(cfg, spec, oracle, T)
                runs.append(_run_section(report, bounds, etas, oracle))
                diagnostics["elapsed_seconds"][str(T)] = [r.elapsed for r in records]
                if cfg.outputs.csv:
                    files[os.path.join(outdir, f"trajectory_T{T}.csv")] = csv_text(report)
        doc = summary_document(name, cfg.base_seed, oracle, runs, echo, tradeoff)
    except EpisodeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    if cfg.outputs.summary:
        files[os.path.join(outdir, "summary.json")] = _dump_json(doc)
    files[os.path.join(outdir, "diagnostics.json")] = _dump_json(_clean(diagnostics))
    try:
        os.makedirs(outdir, exist_ok=True)
        _atomic_write_many(files)
    except OSError as exc:
        print(f"I/O error writing {outdir!r}: {exc}", file=sys.stderr)
        return EXIT_IO

    if not quiet:
        print(f"instance {oracle.fingerprint}  policy {name}  "
              f"{'feasible' if oracle.is_feasible else 'infeasible'}", file=out)
        for run in runs:
            _print_run(run, out)
        if tradeoff is not None:
            for r in tradeoff["rows"]:
                print(f"T = {r['horizon']:>7}  regret {r['regret']:10.2f}  "
                      f"flag errors {r['flag_error_feasible']:.3f} / "
                      f"{r['flag_error_infeasible']:.3f}", file=out)
        print(f"outputs in {outdir}", file=out)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riskbandit", description="Run a risk-constrained bandit experiment.")
    ap.add_argument("--config", metavar="PATH", help="YAML experiment file")
    ap.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS),
                    help="built-in experiment: " + ", ".join(sorted(PRESETS)))
    ap.add_argument("--seed", type=int, help="override base_seed")
    ap.add_argument("--horizon", type=int, help="override horizon")
    ap.add_argument("--reps", type=int, help="override reps")
    ap.add_argument("--out", metavar="DIR", help="override outputs.dir")
    ap.add_argument("--quiet", action="store_true", help="no console summary")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if (args.config is None) == (args.preset is None):
        print("error: give exactly one of --config PATH or --preset NAME", file=sys.stderr)
        return EXIT_CONFIG
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            print(f"I/O error reading {args.config!r}: {exc}", file=sys.stderr)
            return EXIT_IO
    else:
        text = preset(args.preset)
    overrides = {"base_seed": args.seed, "horizon": args.horizon, "reps": args.reps, "out": args.out}
    try:
        cfg = parse_config(text, overrides)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(cfg, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
