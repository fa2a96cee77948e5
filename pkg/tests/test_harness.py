import csv
import json
import math

import numpy as np
import pytest

from dislogamma.errors import DomainError
from dislogamma.harness.cli import main
from dislogamma.harness.config import ExperimentConfig, canonical_hash
from dislogamma.harness.experiments import non_increasing_within, run
from dislogamma.harness.io import read_csv, write_csv, write_json
from dislogamma.harness.verify import identity_battery, perturbed_strain

SMALL = {"n_ladder": [64, 256], "h": 1 / 32}


# ---- config -----------------------------------------------------------------

def test_config_validation():
    for bad in ({"n_ladder": [64, 64]}, {"n_ladder": []}, {"box": [1, 0, 0, 1]}, {"seed": -1}, {"bogus": 1},
                {"h": 0}):
        with pytest.raises(DomainError):
            ExperimentConfig.from_dict(bad, "convergence")
    with pytest.raises(DomainError):
        ExperimentConfig.from_dict({}, "not-a-kind")


def test_config_hash_stable_and_excludes_out():
    a = ExperimentConfig.from_dict({"out": "x", "threads": 4}, "convergence")
    b = ExperimentConfig.from_dict({"out": "y"}, "convergence")
    assert a.config_hash == b.config_hash
    c = ExperimentConfig.from_dict({"seed": 3}, "convergence")
    assert c.config_hash != a.config_hash
    assert canonical_hash({"b": 1, "a": 2}) == canonical_hash({"a": 2, "b": 1})


def test_jitter_band():
    assert non_increasing_within([1.0, 1.05, 0.5], 0.10)
    assert not non_increasing_within([1.0, 1.2], 0.10)


# ---- io ---------------------------------------------------------------------

def test_csv_rfc4180(tmp_path):
    p = write_csv(tmp_path / "a.csv", ("k", "v"), [{"k": 'a,"b"', "v": 0.1}, {"k": "x", "v": None}])
    raw = p.read_bytes()
    assert raw.count(b"\r\n") == 3
    assert b'"a,""b"""' in raw
    rows = read_csv(p)
    assert rows[0]["v"] == "0.1" and rows[1]["v"] == ""


def test_json_sorted_and_nonfinite(tmp_path):
    p = write_json(tmp_path / "a.json", {"b": math.nan, "a": np.float64(1.5)})
    text = p.read_text(encoding="utf-8")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": 1.5, "b": None}


# ---- runners ----------------------------------------------------------------

def test_convergence_small_and_single_step():
    b = run(ExperimentConfig.from_dict(SMALL, "convergence"))
    assert {r.n for r in b.rows} == {64, 256}
    assert any(r.series.endswith(":split") for r in b.rows)
    for r in b.rows:
        if r.series == "mollified:split":
            twin = next(q for q in b.rows if q.series == "mollified" and q.n == r.n)
            assert r.total == pytest.approx(twin.total, abs=1e-8 * (1 + abs(twin.total)))
    b1 = run(ExperimentConfig.from_dict(dict(SMALL, n_ladder=[64]), "convergence"))
    entry = b1.summary["series"]["mollified"]
    assert "non_increasing" not in entry and "pass" not in entry


def test_convergence_outside_regime_flag():
    cfg = ExperimentConfig.from_dict(dict(SMALL, schedule={"rule": "exponential", "c": 1.0, "exponent": 1.0}),
                                     "convergence")
    b = run(cfg)
    assert b.summary["outside_regime"]
    assert min(b.summary["series"]["mollified"]["gamma"]) >= 0.5


def test_reg_compare_identical_descriptors():
    cfg = ExperimentConfig.from_dict(dict(SMALL, regularizers=[{"reg_family": "mollified"}] * 2), "reg_compare")
    b = run(cfg)
    assert b.summary["spread"] == [0.0, 0.0]
    with pytest.raises(DomainError):
        run(ExperimentConfig.from_dict(dict(SMALL, regularizers=[{"reg_family": "mollified"}]), "reg_compare"))


def test_reg_compare_riesz_frombelow_vs_mollified():
    cfg = ExperimentConfig.from_dict({"kernel": {"family": "riesz", "a": 1.0}, "n_ladder": [64, 256, 1024],
                                      "density": {"kind": "truncated_gaussian", "sigma": 0.35, "weights": [0.7, 0.3]},
                                      "regularizers": [{"reg_family": "mollified"}, {"reg_family": "frombelow"}]},
                                     "reg_compare")
    b = run(cfg)
    assert b.summary["spread_decreasing"]


def test_gamma_regime_flags():
    b = run(ExperimentConfig.from_dict({"n_ladder": [100, 1000, 10000]}, "gamma_regime"))
    sched = b.summary["schedules"]
    exp = next(v for k, v in sched.items() if k.startswith("exponential"))
    pw = next(v for k, v in sched.items() if k.startswith("power"))
    assert exp["bounded_below"] and exp["outside_regime"]
    assert not pw["outside_regime"] and pw["log_log_slope"] < -0.8


def test_relax_demo_cases():
    b = run(ExperimentConfig.from_dict({"extras": {"cases": ["singleton", "antipodal", "infeasible"]}}, "relax_demo"))
    assert b.summary["all_pass"] and b.exit_code == 0
    assert b.summary["cases"]["infeasible"]["infeasible"]
    assert "singleton_minimizer.json" in b.artifacts


def test_negative_control_fails_circulation():
    names = {c["name"]: c["pass"] for c in identity_battery(perturbed_strain)}
    assert not names["identity.burgers_circulation"]
    assert all(c["pass"] for c in identity_battery())


# ---- CLI --------------------------------------------------------------------

def _cli(tmp_path, *args, cfg=None):
    argv = list(args) + ["--out", str(tmp_path)]
    if cfg is not None:
        p = tmp_path.parent / f"{tmp_path.name}.json"
        p.write_text(json.dumps(cfg))
        argv += ["--config", str(p)]
    return main(argv)


def test_cli_kernel_verify_exit_codes(tmp_path):
    assert _cli(tmp_path / "ok", "kernel-verify", "--quick") == 0
    assert _cli(tmp_path / "bad", "kernel-verify", "--quick", "--negative-control") != 0
    rep = json.loads((tmp_path / "bad" / "summary.json").read_text())
    assert "identity.burgers_circulation" in rep["failed"]
    assert all({"name", "pass", "worst_point", "ratio"} <= set(c) for c in rep["checks"])


def test_cli_determinism_and_provenance(tmp_path):
    cfg = dict(SMALL, seed=11)
    assert _cli(tmp_path / "a", "convergence", "--threads", "2", cfg=cfg) == 0
    assert _cli(tmp_path / "b", "convergence", cfg=cfg) == 0
    for name in ("results.csv", "long.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    snap = json.loads((tmp_path / "a" / "config.json").read_text())
    h = snap["config_hash"]
    assert snap["config"]["seed"] == 11
    for name in ("results.csv", "long.csv", "timings.csv"):
        with open(tmp_path / "a" / name, newline="") as fh:
            assert {row["config_hash"] for row in csv.DictReader(fh)} == {h}
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["config_hash"] == h
    assert (tmp_path / "a" / "figures" / "convergence.png").stat().st_size > 0
    long = read_csv(tmp_path / "a" / "long.csv")
    assert list(long[0])[:4] == ["experiment", "n", "series", "value"]


def test_cli_relax_and_infeasible(tmp_path):
    assert _cli(tmp_path / "r", "relax-demo", cfg={"extras": {"cases": ["infeasible"]}}) == 0
    rep = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert rep["cases"]["infeasible"]["infeasible"]


def test_cli_rejects_bad_config(tmp_path, capsys):
    assert _cli(tmp_path / "x", "convergence", cfg={"n_ladder": [10, 5]}) == 2
    assert "DomainError" in capsys.readouterr().err


def test_cli_tolerance_and_seed_override(tmp_path):
    _cli(tmp_path / "g", "gamma-regime", "--tolerance", "0.2", "--seed", "5", cfg={"n_ladder": [100, 1000]})
    snap = json.loads((tmp_path / "g" / "config.json").read_text())
    assert snap["config"]["tolerance"] == 0.2 and snap["config"]["seed"] == 5
