import copy
import csv
import io
import json
import os
import random
from importlib import resources

import jsonschema
import numpy as np
import pytest
import yaml

from riskbandit.cli import (
    ConfigError,
    csv_text,
    emit_csv,
    emit_summary,
    main,
    parse_config,
    run_experiment,
)
from riskbandit.instances import Gaussian, InstanceSpec, classify, theorem_bounds
from riskbandit.lower_bounds import instance_etas
from riskbandit.presets import PRESETS, preset
from riskbandit.risk_core import SubGaussianParams
from riskbandit.simulator import monte_carlo, run_episode

MINIMAL = """
instance:
  tau: 5.0
  arms:
    - {kind: constant, value: 0.0}
    - {kind: constant, value: 1.0}
policy:
  name: rc_lcb
  sigma: 0.05
  d_small: 12800.0
horizon: 100
reps: 1
"""

SMALL = {
    "instance": {"level": 0.95, "tau": 2.3, "arms": [
        {"kind": "gaussian", "mu": 0.1, "sigma": 1.0},
        {"kind": "gaussian", "mu": 0.0, "sigma": 1.0},
        {"kind": "gaussian", "mu": 0.5, "sigma": 1.0}]},
    "policy": {"name": "rc_lcb", "sigma": 1.0, "d_small": 32.0},
    "horizon": [200, 400],
    "reps": 5,
    "base_seed": 3,
    "analysis": {"bounds": True, "lower_bounds": True},
}


def schema():
    text = resources.files("riskbandit").joinpath("schema/summary.schema.json").read_text()
    return json.loads(text)


def run_to(tmp_path, doc, name, workers=None):
    d = copy.deepcopy(doc)
    d.setdefault("outputs", {})["dir"] = str(tmp_path / name)
    code = run_experiment(parse_config(d), quiet=True, workers=workers)
    return code, tmp_path / name


def read_bytes(folder, skip=("diagnostics.json",)):
    return {p: (folder / p).read_bytes() for p in sorted(os.listdir(folder)) if p not in skip}


# -- parsing -----------------------------------------------------------------

def test_minimal_config_round_trip():
    cfg = parse_config(MINIMAL)
    again = parse_config(yaml.safe_dump(cfg.to_dict()))
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()
    spec = cfg.instance_spec()
    assert spec.n_arms == 2 and spec.tau == 5.0


def test_presets_parse():
    for name in PRESETS:
        parse_config(preset(name))


def test_p_out_of_range_message():
    doc = preset("heavy_tail")
    doc["policy"]["p"] = 3.0
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert "policy.p: p must be in (1, 2]" in exc.value.errors


def test_heavy_tail_beta_check():
    doc = preset("heavy_tail")
    doc["instance"]["level"] = 0.4
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert any(e.startswith("instance.level") and "beta" in e for e in exc.value.errors)


def test_mode_exclusivity():
    doc = yaml.safe_load(MINIMAL)
    doc["instance"]["constraints"] = [{"kind": "cvar", "alpha": 0.95, "rate": 1.0, "threshold": 1.0}]
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert "instance: choose single-constraint or multi-constraint mode" in exc.value.errors


def test_all_errors_reported_with_paths():
    doc = yaml.safe_load(MINIMAL)
    doc["horizon"] = 1
    doc["reps"] = "many"
    doc["policy"]["sigmma"] = 1.0
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    errs = exc.value.errors
    assert "horizon: T = 1 is smaller than the number of arms K = 2" in errs
    assert any(e.startswith("reps:") for e in errs)
    assert "policy.sigmma: unknown key" in errs
    doc = yaml.safe_load(MINIMAL)
    del doc["policy"]["name"]
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert "policy.name: missing required key" in exc.value.errors


def _key_paths(node, prefix=()):
    if isinstance(node, dict):
        for k, v in node.items():
            yield prefix + (k,)
            yield from _key_paths(v, prefix + (k,))
    elif isinstance(node, list):
        for i, v in enumerate(node):
            yield from _key_paths(v, prefix + (i,))


def _misspell(key, rng):
    ops = [
        lambda s: s + rng.choice("xyz_"),
        lambda s: s[:-1] if len(s) > 1 else s + "q",
        lambda s: s.upper(),
        lambda s: s[:1] + rng.choice("aeiou") + s[1:],
    ]
    return rng.choice(ops)(key)


def test_misspelled_keys_always_rejected():
    base = copy.deepcopy(PRESETS["con_lcb2"])
    base["outputs"] = {"dir": "x", "csv": True, "summary": True}
    base["analysis"] = {"bounds": True, "lower_bounds": False, "tradeoff": False}
    paths = list(_key_paths(base))
    rng = random.Random(0)
    rejected = 0
    for _ in range(100):
        doc = copy.deepcopy(base)
        path = rng.choice(paths)
        node = doc
        for p in path[:-1]:
            node = node[p]
        key = path[-1]
        new = _misspell(key, rng)
        while new == key or new in node:
            new = _misspell(key, rng)
        node[new] = node.pop(key)
        try:
            parse_config(doc)
        except ConfigError:
            rejected += 1
    assert rejected == 100


def test_invalid_yaml_and_root():
    with pytest.raises(ConfigError):
        parse_config("instance: [unclosed")
    with pytest.raises(ConfigError):
        parse_config("- a\n- b\n")


# -- csv ---------------------------------------------------------------------

def _parse_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


def test_csv_round_trip_bit_equal():
    spec = InstanceSpec([Gaussian(0.1, 1), Gaussian(0, 1), Gaussian(0.5, 1)], tau=2.3)
    rep = monte_carlo(spec, "rc_lcb", {"sigma": 1.0, "d_small": 32.0}, 300, 7)
    text = csv_text(rep)
    assert "\r" not in text and text.endswith("\n")
    header, rows = _parse_csv(text)
    assert header[:4] == ["t", "pulls_mean_0", "pulls_mean_1", "pulls_mean_2"]
    for i, row in enumerate(rows):
        assert int(row[0]) == rep.checkpoints[i]
        assert np.array_equal(np.array([float(x) for x in row[1:4]]), rep.mean_pulls[i])
        assert np.array_equal(np.array([float(x) for x in row[4:7]]), rep.se_pulls[i])
        assert float(row[7]) == rep.regret_mean["sub"][i]
        assert float(row[8]) == rep.regret_se["sub"][i]
        assert row[11] == row[12] == ""  # risk regret not applicable on a feasible instance


def test_csv_single_record_zero_se(tmp_path):
    spec = InstanceSpec([Gaussian(0, 1), Gaussian(1, 1)], tau=9.0)
    rec = run_episode(spec, "rc_lcb", {"sigma": 1.0, "d_small": 32.0}, 50, 0)
    path = tmp_path / "rec.csv"
    emit_csv(rec, str(path))
    header, rows = _parse_csv(path.read_text())
    se_cols = [i for i, h in enumerate(header) if "_se" in h and "risk" not in h]
    assert all(float(r[i]) == 0.0 for r in rows for i in se_cols)


def test_csv_empty_checkpoints_header_only():
    spec = InstanceSpec([Gaussian(0, 1), Gaussian(1, 1)], tau=9.0)
    rec = run_episode(spec, "rc_lcb", {"sigma": 1.0, "d_small": 32.0}, 10, 0)
    empty = type(rec)(rec.horizon, (), rec.pulls_at[:0], rec.regret_sub[:0], rec.regret_inf[:0],
                      None, rec.flag, rec.flag_correct, rec.seed)
    text = csv_text(empty)
    assert text.count("\n") == 1 and text.startswith("t,")


# -- summary -----------------------------------------------------------------

def test_summary_validates_and_lists_oracle(tmp_path):
    spec = InstanceSpec([Gaussian(0.1, 1), Gaussian(0, 1), Gaussian(0.5, 1)], tau=2.3)
    oracle = classify(spec)
    rep = monte_carlo(spec, "rc_lcb", {"sigma": 1.0, "d_small": 32.0}, 300, 4)
    bounds = theorem_bounds(oracle, SubGaussianParams(1.0, 2.0, 32.0), spec.level, 300)
    doc = emit_summary(rep, bounds, instance_etas(spec, oracle), str(tmp_path / "s.json"),
                       oracle=oracle)
    jsonschema.validate(json.loads((tmp_path / "s.json").read_text()), schema())
    assert doc["oracle"]["deceiver_set"] == []
    assert doc["oracle"]["gap_tau"][2] == pytest.approx(0.2627, abs=1e-4)
    assert doc["fingerprint"] == oracle.fingerprint


def test_fingerprint_changes_with_arm_parameters():
    base = [Gaussian(0.1, 1), Gaussian(0, 1)]
    fp = classify(InstanceSpec(base, tau=2.3)).fingerprint
    assert classify(InstanceSpec([Gaussian(0.1, 1), Gaussian(0, 1.0000001)], tau=2.3)).fingerprint != fp
    assert classify(InstanceSpec([Gaussian(0.2, 1), Gaussian(0, 1)], tau=2.3)).fingerprint != fp


# -- end to end --------------------------------------------------------------

def test_run_outputs_deterministic_and_consistent(tmp_path):
    code_a, a = run_to(tmp_path, SMALL, "a", workers=1)
    code_b, b = run_to(tmp_path, SMALL, "b", workers=1)
    assert code_a == code_b == 0
    assert read_bytes(a) == read_bytes(b)
    assert sorted(os.listdir(a)) == ["diagnostics.json", "summary.json", "trajectory_T200.csv",
                                     "trajectory_T400.csv"]
    summary = json.loads((a / "summary.json").read_text())
    jsonschema.validate(summary, schema())
    assert "outputs" not in summary["config"]
    for run in summary["runs"]:
        header, rows = _parse_csv((a / f"trajectory_T{run['horizon']}.csv").read_text())
        last = dict(zip(header, rows[-1]))
        assert int(last["t"]) == run["horizon"]
        for n in ("sub", "inf"):
            assert float(last[f"regret_{n}_mean"]) == run["regret"][n]["mean"]
            assert float(last[f"regret_{n}_se"]) == run["regret"][n]["se"]
        for arm in run["arms"]:
            assert float(last[f"pulls_mean_{arm['arm']}"]) == arm["mean_pulls"]
    diag = json.loads((a / "diagnostics.json").read_text())
    assert set(diag["elapsed_seconds"]) == {"200", "400"}


def test_threads_env_does_not_change_bytes(tmp_path, monkeypatch):
    monkeypatch.setenv("RISKBANDIT_THREADS", "1")
    _, seq = run_to(tmp_path, SMALL, "seq")
    monkeypatch.setenv("RISKBANDIT_THREADS", "3")
    _, par = run_to(tmp_path, SMALL, "par")
    assert read_bytes(seq) == read_bytes(par)


def test_tradeoff_mode_outputs(tmp_path):
    doc = copy.deepcopy(SMALL)
    doc["analysis"] = {"tradeoff": True, "infeasible_tau": 1.7627, "bounds": False}
    code, out = run_to(tmp_path, doc, "t", workers=1)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    jsonschema.validate(summary, schema())
    header, rows = _parse_csv((out / "tradeoff.csv").read_text())
    assert header == ["horizon", "regret", "regret_se", "flag_error_feasible",
                      "flag_error_infeasible"]
    assert [int(r[0]) for r in rows] == [200, 400]
    assert [float(r[1]) for r in rows] == [r["regret"] for r in summary["tradeoff"]["rows"]]


def test_invalid_output_dir_exit_4_no_files(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    doc = copy.deepcopy(SMALL)
    doc["outputs"] = {"dir": str(blocker / "sub")}
    assert run_experiment(parse_config(doc), quiet=True, workers=1) == 4
    assert sorted(os.listdir(tmp_path)) == ["file"]


def test_readonly_output_dir_exit_4(tmp_path):
    doc = copy.deepcopy(SMALL)
    ro = tmp_path / "ro"
    ro.mkdir()
    os.chmod(ro, 0o500)
    try:
        if os.access(ro, os.W_OK):
            pytest.skip("running with privileges that ignore directory permissions")
        doc["outputs"] = {"dir": str(ro)}
        assert run_experiment(parse_config(doc), quiet=True, workers=1) == 4
        assert os.listdir(ro) == []
    finally:
        os.chmod(ro, 0o700)


def test_main_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    doc = yaml.safe_load(MINIMAL)
    doc["outputs"] = {"dir": str(tmp_path / "out")}
    cfg.write_text(yaml.safe_dump(doc))
    assert main(["--config", str(cfg)]) == 0
    assert "outputs in" in capsys.readouterr().out
    assert main(["--config", str(cfg), "--quiet", "--reps", "0"]) == 2
    assert main(["--config", str(tmp_path / "missing.yaml")]) == 4
    assert main([]) == 2
    assert main(["--config", str(cfg), "--preset", "feasible3"]) == 2
    assert main(["--bogus"]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("instance: {tau: 1, arms: []}\npolicy: {name: nope}\nhorizon: 5\n")
    assert main(["--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "policy.name" in err


def test_main_overrides_and_preset(tmp_path):
    out = tmp_path / "p"
    code = main(["--preset", "feasible3", "--horizon", "60", "--reps", "2", "--seed", "9",
                 "--out", str(out), "--quiet"])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["base_seed"] == 9 and summary["runs"][0]["horizon"] == 60
    assert summary["runs"][0]["reps"] == 2


def test_runtime_error_exit_3(tmp_path, monkeypatch):
    import riskbandit.simulator as sim

    def boom(*a, **k):
        raise FloatingPointError("synthetic failure")

    monkeypatch.setattr(sim, "run_episode", boom)
    doc = copy.deepcopy(SMALL)
    doc["outputs"] = {"dir": str(tmp_path / "o")}
    assert run_experiment(parse_config(doc), quiet=True, workers=1) == 3
    assert not (tmp_path / "o").exists()
