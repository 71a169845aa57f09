"""Config resolution and command line behaviour.

The golden interim report values here come from working the 12-patient
example dataset through by hand: four complete cases split 2/2 between the
arms, four with only the short-term endpoint and four with only covariates.
"""

import copy
import json
import math
import textwrap
from pathlib import Path

import numpy as np
import pytest

from adaptrial.adaptive import reassess_sample_size
from adaptrial.cli import _effective_threads, main
from adaptrial.config import load_raw, parse_config, resolve
from adaptrial.errors import BadConfig
from adaptrial.scenarios import (
    DAYS_PER_MONTH,
    short_term,
    single_covariate,
    ssr,
)

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


# ---------------------------------------------------------------- config


def test_preset_with_overrides():
    raw = {
        "scenario": {"preset": "single_covariate", "c": 2.0, "effect": "null"},
        "design": {"n_per_arm": 100},
        "run": {"reps": 5},
    }
    scenario, run, _ = resolve(raw)
    assert scenario.n_per_arm == 100
    assert scenario.y_model["a"] == 0.0  # null effect zeroes the treatment terms
    assert scenario.y_model["z1"] == pytest.approx(2.0 * 0.39)
    assert scenario.working.f1.describe() == "y ~ z1"
    assert run.reps == 5


def test_unknown_preset():
    with pytest.raises(BadConfig, match="unknown scenario preset"):
        resolve({"scenario": {"preset": "bogus"}})


@pytest.mark.parametrize("raw, message", [
    ({"desing": {}}, r"unknown section"),
    ({"design": {"n_per_arm": 10, "foo": 1}}, r"unknown key 'foo'"),
    ({"interim": {"trigger": {"kind": "fixed_day", "dya": 3}}}, r"interim.trigger"),
])
def test_unknown_keys_are_rejected(raw, message):
    with pytest.raises(BadConfig, match=message):
        resolve(raw)


def _mutate(path, value):
    def apply(raw):
        node = raw
        for key in path[:-1]:
            node = node.setdefault(key, {})
        if value is _DELETE:
            del node[path[-1]]
        else:
            node[path[-1]] = value
    return apply


_DELETE = object()


def _lag_x_after_lag_y(raw):
    del raw["recruitment"]["lag_x_months"]
    raw["recruitment"]["lag_x_days"] = 1.0e6


_BAD_SETTINGS = [
    (_mutate(("design", "n_per_arm"), _DELETE), "n_per_arm is required"),
    (_mutate(("design", "n_per_arm"), 1), "at least 2"),
    (_mutate(("design", "alpha"), 0.6), "alpha and beta"),
    (_mutate(("recruitment", "rate_per_month"), 0.0), "must be positive"),
    (_lag_x_after_lag_y, "lag_x <= lag_y"),
    (_mutate(("recruitment", "lag_y_days"), 100.0), "months or days, not both"),
    (_mutate(("working_models", "f"), _DELETE), r"working_models.*f is required"),
    (_mutate(("working_models", "f"), "y ~ x + z1"), r"\[working_models\]"),
    (_mutate(("generate", "y_model"), _DELETE), "y_model is required"),
    (_mutate(("generate", "y_model", "q7"), 1.0), "unknown columns.*q7"),
    (_mutate(("generate", "x_model", "a"), 1.0), "must not depend on treatment"),
    (_mutate(("interim", "method"), "bogus"), "method must be one of"),
    (_mutate(("interim", "trigger"), {"kind": "bogus"}), "unknown trigger kind"),
    (_mutate(("interim", "trigger"), {"kind": "fixed_day", "day": 0}), "day must be positive"),
    (_mutate(("interim", "trigger"), {"kind": "information_fraction"}), "needs 'target'"),
    (_mutate(("interim", "trigger"),
             {"kind": "information_fraction", "target": 1.5}), "target must lie"),
    (_mutate(("boundary", "kind"), "bogus"), "unknown boundary kind"),
    (_mutate(("boundary",), {"kind": "fixed"}), "needs 'threshold'"),
    (_mutate(("ssr", "cap_multiplier"), 0.5), "at least 1"),
    (_mutate(("ssr", "theta_mode"), "bogus"), "theta_mode"),
    (_mutate(("ssr", "w"), 1.0), "w must lie"),
    (_mutate(("run", "reps"), 0), "reps must be at least 1"),
    (_mutate(("run", "threads"), 0), "threads must be at least 1"),
]


@pytest.mark.parametrize("mutate, message", _BAD_SETTINGS)
def test_bad_settings_are_rejected(mutate, message):
    raw = ssr(1.0)
    mutate(raw)
    with pytest.raises(BadConfig, match=message):
        resolve(raw)


def test_x_only_method_needs_a_short_term_endpoint():
    raw = single_covariate(2.0)
    raw["interim"]["method"] = "x_only"
    with pytest.raises(BadConfig, match="x_only"):
        resolve(raw)


def test_x_model_needs_a_lag():
    raw = single_covariate(2.0)
    raw["generate"]["x_model"] = {"intercept": 0.1, "z1": 0.5}
    with pytest.raises(BadConfig, match="no lag_x"):
        resolve(raw)


def test_trigger_day_default_targets_75_percent_recruited():
    scenario, _, _ = resolve(single_covariate(2.0))
    rate_day = 8.0 / DAYS_PER_MONTH
    assert scenario.trigger_day == float(math.ceil(0.75 * 454 / rate_day))


def test_w_defaults():
    raw = ssr(1.0)
    raw["interim"]["trigger"] = {"kind": "information_fraction", "target": 0.5}
    assert resolve(raw)[0].w == 0.5
    raw["interim"]["trigger"] = {"kind": "information_fraction", "target": 0.97}
    assert resolve(raw)[0].w == 0.95
    scenario, _, _ = resolve(ssr(1.0))  # default fixed-day trigger
    rate_day = 15.0 / DAYS_PER_MONTH
    expected = rate_day * (scenario.trigger_day - scenario.lag_y_days) / 638
    assert scenario.w == pytest.approx(min(max(expected, 0.05), 0.95))


def test_explicit_w_wins():
    raw = ssr(1.0)
    raw["ssr"]["w"] = 0.37
    assert resolve(raw)[0].w == 0.37


@pytest.mark.parametrize("build_raw", [
    lambda: single_covariate(2.0, "null"),
    lambda: ssr(0.5),
    lambda: short_term("abs_z1"),
], ids=["single_covariate", "ssr", "short_term"])
def test_resolved_echo_reparses_identically(tmp_path, build_raw):
    raw = build_raw()
    scenario1, _, resolved1 = resolve(raw)
    path = tmp_path / "echo.json"
    path.write_text(json.dumps(resolved1), encoding="utf-8")
    scenario2, _, resolved2 = parse_config(str(path))
    assert resolved2 == resolved1
    for name in ("n_per_arm", "alpha", "beta", "rate_per_day", "lag_x_days",
                 "lag_y_days", "x_model", "y_model", "method", "trigger_kind",
                 "trigger_day", "trigger_target", "ssr_enabled",
                 "cap_multiplier", "allow_decrease", "theta_mode", "w"):
        assert getattr(scenario2, name) == getattr(scenario1, name), name
    assert scenario2.boundary == scenario1.boundary
    for part in ("h1", "h0", "f1", "f0"):
        assert getattr(scenario2.working, part).describe() == \
            getattr(scenario1.working, part).describe()
    assert set(scenario2.covariates) == set(scenario1.covariates)
    for key in scenario1.covariates:
        assert np.array_equal(scenario2.covariates[key], scenario1.covariates[key])


def test_custom_covariate_table(tmp_path):
    table = tmp_path / "cov.csv"
    table.write_text("id,z1\n1,0.5\n2,-0.5\n3,1.5\n", encoding="utf-8")
    raw = single_covariate(2.0)
    raw["covariates"] = {"source": str(table)}
    scenario, _, _ = resolve(raw)
    assert list(scenario.covariates) == ["z1"]
    assert np.array_equal(scenario.covariates["z1"], [0.5, -0.5, 1.5])

    table.write_text("id,z1\n", encoding="utf-8")
    with pytest.raises(BadConfig, match="empty"):
        resolve(raw)
    table.write_text("id,z1\n1,abc\n", encoding="utf-8")
    with pytest.raises(BadConfig, match="non-numeric"):
        resolve(raw)


def test_load_raw_errors(tmp_path):
    with pytest.raises(BadConfig, match="not found"):
        load_raw(str(tmp_path / "nope.toml"))
    bad_toml = tmp_path / "bad.toml"
    bad_toml.write_text("= nonsense", encoding="utf-8")
    with pytest.raises(BadConfig, match="bad TOML"):
        load_raw(str(bad_toml))
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{", encoding="utf-8")
    with pytest.raises(BadConfig, match="bad JSON"):
        load_raw(str(bad_json))


def test_interim_config_skips_the_generative_model():
    scenario, _, _ = parse_config(
        str(CONFIGS / "interim_example.toml"), for_simulation=False,
    )
    assert scenario.n_total == 12
    assert scenario.covariates == {}
    assert scenario.y_model is None
    assert scenario.working.h1.describe() == "y ~ x + z1"


# ------------------------------------------------------------------- cli


def test_cli_interim_golden_report(tmp_path, capsys):
    out = tmp_path / "report.json"
    rc = main([
        "interim",
        "--dataset", str(CONFIGS / "example_interim.csv"),
        "--config", str(CONFIGS / "interim_example.toml"),
        "--out", str(out),
    ])
    assert rc == 0
    text = out.read_text(encoding="utf-8")
    assert capsys.readouterr().out == text
    report = json.loads(text)
    assert report["method"] == "proposal"
    assert report["n_planned"] == 12
    assert report["n_recruited"] == 12
    assert report["mu1"] == pytest.approx(0.5, rel=1e-12)
    assert report["mu0"] == pytest.approx(1.0, rel=1e-12)
    assert report["diff"] == pytest.approx(-0.5, rel=1e-12)
    assert report["s2"] == pytest.approx(3.0 / 22.0, rel=1e-12)
    assert report["pi_hat"] == pytest.approx(0.5)
    assert report["pi_x_hat"] == pytest.approx(2.0 / 3.0)
    assert report["pi_y_hat"] == pytest.approx(0.5)
    assert report["t_unblinded"] == pytest.approx(11.0 / 27.0, rel=1e-12)
    assert report["t_blinded"] == pytest.approx(0.34782608695652095, rel=1e-9)
    assert report["z_t"] == pytest.approx(-1.3540064007726602, rel=1e-9)
    assert report["b_t"] == pytest.approx(report["z_t"] * math.sqrt(11.0 / 27.0))
    assert report["theta_design"] == pytest.approx(3.2415155500846544, rel=1e-12)
    assert report["cp_design"] == pytest.approx(0.12031153265156957, rel=1e-9)
    assert report["cp_observed"] is None  # undefined for an unfavourable z
    assert report["futility_threshold"] == pytest.approx(0.3954407866075894, rel=1e-9)
    assert report["decision"] == "stop"
    assert report["ssr"] is None
    assert report["config"]["working_models"]["h"] == "y ~ x + z1"


def test_cli_interim_standard_method(tmp_path):
    out = tmp_path / "report.json"
    rc = main([
        "interim",
        "--dataset", str(CONFIGS / "example_interim.csv"),
        "--config", str(CONFIGS / "interim_example.toml"),
        "--method", "standard",
        "--out", str(out),
    ])
    assert rc == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["method"] == "standard"
    assert report["n_recruited"] == 4  # complete cases only
    assert report["diff"] == pytest.approx(-0.5, rel=1e-12)
    assert report["t_unblinded"] == pytest.approx(4.0 / 12.0, rel=1e-12)


def test_cli_interim_inconsistent_dataset_exits_2(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text(
        "id,arm,z1,x,y\np01,1,1.0,1,1\np02,0,0.0,,1\n", encoding="utf-8",
    )
    rc = main([
        "interim", "--dataset", str(data),
        "--config", str(CONFIGS / "interim_example.toml"),
    ])
    assert rc == 2
    assert "p02" in capsys.readouterr().err


def test_cli_interim_non_numeric_cell_exits_2(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text("id,arm,z1,y\np01,1,abc,1\n", encoding="utf-8")
    rc = main([
        "interim", "--dataset", str(data),
        "--config", str(CONFIGS / "interim_example.toml"),
    ])
    assert rc == 2
    assert "not numeric" in capsys.readouterr().err


def test_cli_interim_estimation_failure_exits_3(tmp_path, capsys):
    data = tmp_path / "early.csv"
    data.write_text(
        "id,arm,z1,x,y\n"
        "p01,1,1.0,1,\np02,1,0.0,0,\np03,0,1.0,1,\np04,0,0.0,0,\n",
        encoding="utf-8",
    )
    rc = main([
        "interim", "--dataset", str(data),
        "--config", str(CONFIGS / "interim_example.toml"),
    ])
    assert rc == 3
    assert "error" in capsys.readouterr().err


def test_cli_ssr_matches_the_library(tmp_path, capsys):
    out = tmp_path / "ssr.json"
    rc = main([
        "ssr", "--config", str(CONFIGS / "ssr_null.toml"),
        "--z-t", "2.29", "--n-recruited", "400", "--out", str(out),
    ])
    assert rc == 0
    capsys.readouterr()
    report = json.loads(out.read_text(encoding="utf-8"))
    scenario, _, _ = parse_config(str(CONFIGS / "ssr_null.toml"),
                                  for_simulation=False)
    res = reassess_sample_size(
        2.29, scenario.w, scenario.n_total, 400, scenario.combination_plan,
        cap_multiplier=scenario.cap_multiplier,
        allow_decrease=scenario.allow_decrease,
    )
    assert report["t"] == pytest.approx(scenario.w)
    assert report["n_new"] == res.n_new
    assert report["n_second_stage"] == pytest.approx(res.n_second_stage)
    assert report["capped"] == res.capped
    assert report["rationale"] == res.rationale


def test_cli_ssr_observed_mode_needs_positive_z(capsys):
    rc = main([
        "ssr", "--config", str(CONFIGS / "ssr_null.toml"),
        "--z-t", "0.0", "--n-recruited", "400", "--theta-mode", "observed",
    ])
    assert rc == 3
    assert "error" in capsys.readouterr().err


def _tiny_simulate_config(tmp_path, extra=""):
    path = tmp_path / "sim.toml"
    path.write_text(textwrap.dedent(f"""\
        [scenario]
        preset = "ssr"
        c = 0.0

        [run]
        seed = 3
        reps = 6
        {extra}
        """), encoding="utf-8")
    return path


def test_cli_simulate_outputs_and_thread_invariance(tmp_path, capsys):
    config = _tiny_simulate_config(tmp_path)

    def run(outdir, *extra):
        rc = main(["simulate", "--config", str(config), "--out", str(outdir),
                   *extra])
        assert rc == 0
        return {
            name: (outdir / name).read_bytes()
            for name in ("summary.json", "reps.csv", "plotdata.csv")
        }

    first = run(tmp_path / "a")
    stdout = capsys.readouterr().out
    assert "replications" in stdout
    again = run(tmp_path / "b")
    threaded = run(tmp_path / "c", "--threads", "2")
    assert first == again
    assert first == threaded

    summary = json.loads(first["summary.json"].decode("utf-8"))
    oc = summary["operating_characteristics"]
    assert oc["reps"] == 6
    assert oc["failures"] == 0
    # the emitted config must itself be a valid, identical-scenario config
    scenario, run_cfg, _ = resolve(summary["config"])
    assert scenario.n_total == 638
    assert run_cfg.seed == 3 and run_cfg.reps == 6
    assert first["reps.csv"].decode("utf-8").count("\n") == 7
    assert first["plotdata.csv"].decode("utf-8").count("\n") == 2


def test_cli_simulate_method_override(tmp_path, capsys):
    config = _tiny_simulate_config(tmp_path)
    outdir = tmp_path / "std"
    rc = main(["simulate", "--config", str(config), "--out", str(outdir),
               "--method", "standard"])
    assert rc == 0
    capsys.readouterr()
    summary = json.loads((outdir / "summary.json").read_text(encoding="utf-8"))
    assert summary["config"]["interim"]["method"] == "standard"
    plot = (outdir / "plotdata.csv").read_text(encoding="utf-8").splitlines()
    assert plot[1].startswith("standard,")


def test_cli_simulate_failure_budget_exits_4(tmp_path, capsys):
    config = _tiny_simulate_config(tmp_path, extra=(
        "[interim.trigger]\nkind = \"fixed_day\"\nday = 30\n"
    ))
    rc = main(["simulate", "--config", str(config)])
    assert rc == 4
    assert "replications failed" in capsys.readouterr().err


def test_cli_simulate_bad_config_exits_2(tmp_path, capsys):
    config = tmp_path / "bad.toml"
    config.write_text("[desing]\nreps = 2\n", encoding="utf-8")
    rc = main(["simulate", "--config", str(config)])
    assert rc == 2
    assert "unknown section" in capsys.readouterr().err


def test_cli_power_tables(tmp_path, capsys):
    config = tmp_path / "grid.toml"
    config.write_text(textwrap.dedent("""\
        [scenario]
        preset = "single_covariate"
        c = 2.0
        effect = "null"

        [power_tables]
        c_values = [0.0, 2.0]
        methods = ["standard"]
        reps = 2

        [run]
        seed = 5
        """), encoding="utf-8")
    out = tmp_path / "grid.csv"
    rc = main(["power-tables", "--config", str(config), "--out", str(out)])
    assert rc == 0
    assert "method" in capsys.readouterr().out
    lines = out.read_text(encoding="utf-8").strip().splitlines()
    assert len(lines) == 3  # header + one row per c value
    assert lines[1].startswith("0.0,standard")
    assert lines[2].startswith("2.0,standard")


def test_cli_power_tables_needs_a_preset(tmp_path, capsys):
    config = tmp_path / "nopreset.toml"
    config.write_text("[design]\nn_per_arm = 10\n", encoding="utf-8")
    rc = main(["power-tables", "--config", str(config)])
    assert rc == 2
    assert "preset" in capsys.readouterr().err


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "adaptrial" in capsys.readouterr().out


def test_effective_threads_order(monkeypatch):
    monkeypatch.delenv("ADAPTRIAL_THREADS", raising=False)
    assert _effective_threads(None, 3) == 3
    assert _effective_threads(2, 3) == 2
    monkeypatch.setenv("ADAPTRIAL_THREADS", "4")
    assert _effective_threads(None, 3) == 4
    assert _effective_threads(2, 3) == 2  # the flag still wins
    monkeypatch.setenv("ADAPTRIAL_THREADS", "abc")
    with pytest.raises(BadConfig, match="ADAPTRIAL_THREADS"):
        _effective_threads(None, 3)
