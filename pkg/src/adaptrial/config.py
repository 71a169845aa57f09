"""Configuration loading, validation and resolution.

Configs are TOML (or JSON with the same structure).  A config either spells
out the generative model explicitly or names a bundled scenario preset
under ``[scenario]`` and overrides individual sections on top.  Parsing
produces a fully resolved :class:`ScenarioConfig` plus run settings, and a
plain dict echo of the resolved config that parses back to the identical
scenario, so an emitted config reproduces its run byte for byte.

Unknown keys anywhere are an error: silently ignored settings in a trial
simulation are worse than a refusal to run.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import scenarios
from .errors import BadConfig
from .estimator import WorkingModels
from .monitoring import FutilityBoundary
from .simulate import METHODS, ScenarioConfig

_SCHEMA = {
    "scenario": {"preset", "c", "effect", "working", "n_per_arm"},
    "design": {"n_per_arm", "alpha", "beta"},
    "recruitment": {
        "rate_per_month", "lag_x_months", "lag_y_months", "lag_x_days", "lag_y_days",
    },
    "covariates": {"source"},
    "generate": {"x_model", "y_model"},
    "working_models": {"h", "f", "h0", "f0"},
    "interim": {"method", "trigger"},
    "boundary": {"kind", "threshold", "alpha", "beta"},
    "ssr": {"enabled", "cap_multiplier", "allow_decrease", "theta_mode", "w"},
    "run": {"seed", "reps", "threads"},
    "power_tables": {"c_values", "methods", "effect", "reps"},
}
_TRIGGER_KEYS = {"kind", "day", "target"}


@dataclass
class RunConfig:
    seed: int = 1
    reps: int = 100
    threads: int = 1


def _check_keys(raw: dict) -> None:
    for section, content in raw.items():
        if section not in _SCHEMA:
            raise BadConfig(f"unknown section [{section}]")
        if not isinstance(content, dict):
            raise BadConfig(f"[{section}] must be a table")
        for key in content:
            if key not in _SCHEMA[section]:
                raise BadConfig(f"unknown key '{key}' in [{section}]")
    trigger = raw.get("interim", {}).get("trigger", {})
    if not isinstance(trigger, dict):
        raise BadConfig("[interim].trigger must be a table")
    for key in trigger:
        if key not in _TRIGGER_KEYS:
            raise BadConfig(f"unknown key '{key}' in [interim.trigger]")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_raw(path: str) -> dict:
    if not os.path.exists(path):
        raise BadConfig(f"config file not found: {path}")
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            try:
                return json.load(fh)
            except json.JSONDecodeError as exc:
                raise BadConfig(f"bad JSON in {path}: {exc}") from exc
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise BadConfig(f"bad TOML in {path}: {exc}") from exc


def _apply_preset(raw: dict) -> dict:
    scen = raw.get("scenario")
    if not scen:
        return raw
    name = scen.get("preset")
    if name not in scenarios.PRESETS:
        known = ", ".join(sorted(scenarios.PRESETS))
        raise BadConfig(f"unknown scenario preset '{name}' (known: {known})")
    kwargs = {}
    if "c" in scen:
        kwargs["c"] = float(scen["c"])
    if "effect" in scen:
        kwargs["effect"] = scen["effect"]
    if "working" in scen:
        kwargs["working"] = scen["working"]
    if "n_per_arm" in scen:
        kwargs["n_per_arm"] = int(scen["n_per_arm"])
    try:
        preset = scenarios.PRESETS[name](**kwargs)
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"bad [scenario] settings for preset '{name}': {exc}") from exc
    merged = _merge(preset, {k: v for k, v in raw.items() if k != "scenario"})
    return merged


def _load_covariates(source: str) -> dict[str, np.ndarray]:
    if source == "bundled":
        return scenarios.load_seed_covariates()
    if not os.path.exists(source):
        raise BadConfig(f"covariate table not found: {source}")
    with open(source, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise BadConfig(f"covariate table {source} is empty")
    names = [c for c in rows[0] if c != "id"]
    try:
        return {n: np.array([float(r[n]) for r in rows]) for n in names}
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"non-numeric covariate value in {source}: {exc}") from exc


def _coef_map(value, where: str) -> dict:
    if not isinstance(value, dict) or not value:
        raise BadConfig(f"{where} must be a non-empty coefficient table")
    out = {}
    for key, coef in value.items():
        try:
            out[key] = float(coef)
        except (TypeError, ValueError) as exc:
            raise BadConfig(f"{where}.{key} must be numeric") from exc
    return out


def _model_columns(coefficients: dict) -> set[str]:
    cols: set[str] = set()
    for key in coefficients:
        if key == "intercept":
            continue
        name = key[4:-1] if key.startswith("abs(") else key
        cols.update(part.strip() for part in name.split(":"))
    return cols


def resolve(raw: dict, for_simulation: bool = True) -> tuple[ScenarioConfig, RunConfig, dict]:
    """Validate ``raw`` and fill defaults.

    Returns the scenario, the run settings and a resolved echo dict that
    parses back to the same scenario.  With ``for_simulation`` False the
    generative model section becomes optional (an interim analysis of a
    real dataset does not need one).
    """
    _check_keys(raw)
    raw = _apply_preset(raw)
    _check_keys(raw)

    design = raw.get("design", {})
    if "n_per_arm" not in design:
        raise BadConfig("[design].n_per_arm is required")
    n_per_arm = int(design["n_per_arm"])
    if n_per_arm < 2:
        raise BadConfig("[design].n_per_arm must be at least 2")
    alpha = float(design.get("alpha", 0.025))
    beta = float(design.get("beta", 0.10))
    if not 0.0 < alpha < 0.5 or not 0.0 < beta < 0.5:
        raise BadConfig("[design] alpha and beta must lie in (0, 0.5)")

    rec = raw.get("recruitment", {})
    if "lag_x_months" in rec and "lag_x_days" in rec:
        raise BadConfig("[recruitment]: give lag_x in months or days, not both")
    if "lag_y_months" in rec and "lag_y_days" in rec:
        raise BadConfig("[recruitment]: give lag_y in months or days, not both")
    rate_month = float(rec.get("rate_per_month", scenarios.DEFAULT_RATE_PER_MONTH))
    if rate_month <= 0:
        raise BadConfig("[recruitment].rate_per_month must be positive")
    rate_day = rate_month / scenarios.DAYS_PER_MONTH
    if "lag_x_days" in rec:
        lag_x = None if rec["lag_x_days"] is None else float(rec["lag_x_days"])
    else:
        months = rec.get("lag_x_months", scenarios.DEFAULT_LAG_X_MONTHS)
        lag_x = None if months is None else float(months) * scenarios.DAYS_PER_MONTH
    if "lag_y_days" in rec:
        lag_y = float(rec["lag_y_days"])
    else:
        lag_y = float(rec.get("lag_y_months", scenarios.DEFAULT_LAG_Y_MONTHS)) \
            * scenarios.DAYS_PER_MONTH
    if lag_x is not None and not 0 <= lag_x <= lag_y:
        raise BadConfig("[recruitment]: need 0 <= lag_x <= lag_y")
    if lag_y <= 0:
        raise BadConfig("[recruitment]: lag_y must be positive")

    source = raw.get("covariates", {}).get("source", "bundled")
    covariates = _load_covariates(source) if for_simulation else {}

    gen = raw.get("generate", {})
    y_model = None
    x_model = None
    if for_simulation:
        if "y_model" not in gen:
            raise BadConfig("[generate].y_model is required")
        y_model = _coef_map(gen["y_model"], "[generate].y_model")
        if gen.get("x_model") is not None:
            x_model = _coef_map(gen["x_model"], "[generate].x_model")
        known = set(covariates) | {"a"}
        x_cols = _model_columns(x_model) if x_model else set()
        if x_model and not x_cols <= known:
            raise BadConfig(
                f"[generate].x_model references unknown columns {sorted(x_cols - known)}"
            )
        if x_model and "a" in x_cols:
            raise BadConfig("[generate].x_model must not depend on treatment")
        y_cols = _model_columns(y_model)
        y_known = known | ({"x"} if x_model else set())
        if not y_cols <= y_known:
            raise BadConfig(
                f"[generate].y_model references unknown columns {sorted(y_cols - y_known)}"
            )
        if x_model is not None and lag_x is None:
            raise BadConfig("[generate].x_model given but recruitment has no lag_x")
        if x_model is None and lag_x is not None:
            lag_x = None  # no short-term endpoint generated, so none is observed

    wm = raw.get("working_models", {})
    if "f" not in wm:
        raise BadConfig("[working_models].f is required")
    if for_simulation and x_model is not None and "h" not in wm:
        raise BadConfig("[working_models].h is required when x is generated")
    try:
        working = WorkingModels.from_formulas(
            wm.get("h", "y ~ 1"), wm["f"], wm.get("h0"), wm.get("f0"),
        )
    except ValueError as exc:
        raise BadConfig(f"[working_models]: {exc}") from exc

    interim = raw.get("interim", {})
    method = interim.get("method", "proposal")
    if method not in METHODS:
        raise BadConfig(f"[interim].method must be one of {', '.join(METHODS)}")
    if for_simulation and method == "x_only" and x_model is None:
        raise BadConfig("[interim].method x_only needs a generated x")
    trigger = interim.get("trigger", {"kind": "fixed_day"})
    kind = trigger.get("kind", "fixed_day")
    n_total = 2 * n_per_arm
    trigger_day = None
    trigger_target = None
    if kind == "fixed_day":
        trigger_day = float(trigger.get("day", math.ceil(0.75 * n_total / rate_day)))
        if trigger_day <= 0:
            raise BadConfig("[interim.trigger].day must be positive")
    elif kind == "information_fraction":
        if "target" not in trigger:
            raise BadConfig("[interim.trigger] kind information_fraction needs 'target'")
        trigger_target = float(trigger["target"])
        if not 0.0 < trigger_target <= 1.0:
            raise BadConfig("[interim.trigger].target must lie in (0, 1]")
    else:
        raise BadConfig(f"unknown trigger kind '{kind}'")

    bnd = raw.get("boundary", {})
    bkind = bnd.get("kind", "obrien_fleming")
    b_alpha = float(bnd.get("alpha", alpha))
    b_beta = float(bnd.get("beta", beta))
    if bkind == "obrien_fleming":
        boundary = FutilityBoundary.obrien_fleming(b_alpha, b_beta)
    elif bkind == "fixed":
        if "threshold" not in bnd:
            raise BadConfig("[boundary] kind fixed needs 'threshold'")
        boundary = FutilityBoundary.fixed(float(bnd["threshold"]), b_alpha, b_beta)
    elif bkind == "none":
        boundary = FutilityBoundary.fixed(-1.0, b_alpha, b_beta)
    else:
        raise BadConfig(f"unknown boundary kind '{bkind}'")

    ssr = raw.get("ssr", {})
    ssr_enabled = bool(ssr.get("enabled", False))
    cap = float(ssr.get("cap_multiplier", 2.0))
    if cap < 1.0:
        raise BadConfig("[ssr].cap_multiplier must be at least 1")
    allow_decrease = bool(ssr.get("allow_decrease", True))
    theta_mode = ssr.get("theta_mode", "design")
    if theta_mode not in ("design", "observed"):
        raise BadConfig("[ssr].theta_mode must be 'design' or 'observed'")
    if "w" in ssr:
        w = float(ssr["w"])
        if not 0.0 < w < 1.0:
            raise BadConfig("[ssr].w must lie in (0, 1)")
    elif trigger_target is not None:
        w = min(max(trigger_target, 0.05), 0.95)
    else:
        # pre-specifiable stand-in for the planned information fraction:
        # the expected share of patients fully observed at the interim day
        expected = rate_day * (trigger_day - lag_y) / n_total
        w = min(max(expected, 0.05), 0.95)

    run_raw = raw.get("run", {})
    run = RunConfig(
        seed=int(run_raw.get("seed", 1)),
        reps=int(run_raw.get("reps", 100)),
        threads=int(run_raw.get("threads", 1)),
    )
    if run.reps < 1:
        raise BadConfig("[run].reps must be at least 1")
    if run.threads < 1:
        raise BadConfig("[run].threads must be at least 1")

    resolved = {
        "design": {"n_per_arm": n_per_arm, "alpha": alpha, "beta": beta},
        "recruitment": {
            "rate_per_month": rate_month,
            "lag_x_days": lag_x,
            "lag_y_days": lag_y,
        },
        "covariates": {"source": source},
        "generate": {"x_model": x_model, "y_model": y_model},
        "working_models": {
            "h": working.h1.describe(), "h0": working.h0.describe(),
            "f": working.f1.describe(), "f0": working.f0.describe(),
        },
        "interim": {
            "method": method,
            "trigger": (
                {"kind": "fixed_day", "day": trigger_day}
                if kind == "fixed_day"
                else {"kind": "information_fraction", "target": trigger_target}
            ),
        },
        "boundary": (
            {"kind": bkind, "alpha": b_alpha, "beta": b_beta}
            if bkind != "fixed"
            else {"kind": bkind, "threshold": boundary.threshold,
                  "alpha": b_alpha, "beta": b_beta}
        ),
        "ssr": {
            "enabled": ssr_enabled,
            "cap_multiplier": cap,
            "allow_decrease": allow_decrease,
            "theta_mode": theta_mode,
            "w": w,
        },
        "run": {"seed": run.seed, "reps": run.reps, "threads": run.threads},
    }
    if raw.get("power_tables"):
        resolved["power_tables"] = dict(raw["power_tables"])

    scenario = ScenarioConfig(
        n_per_arm=n_per_arm,
        alpha=alpha,
        beta=beta,
        rate_per_day=rate_day,
        lag_x_days=lag_x,
        lag_y_days=lag_y,
        covariates=covariates,
        x_model=x_model,
        y_model=y_model,
        working=working,
        method=method,
        trigger_kind=kind,
        trigger_day=trigger_day,
        trigger_target=trigger_target,
        boundary=boundary,
        ssr_enabled=ssr_enabled,
        cap_multiplier=cap,
        allow_decrease=allow_decrease,
        theta_mode=theta_mode,
        w=w,
        raw=resolved,
    )
    return scenario, run, resolved


def parse_config(path: str, for_simulation: bool = True) -> tuple[ScenarioConfig, RunConfig, dict]:
    """Load and resolve a TOML or JSON config file."""
    return resolve(load_raw(path), for_simulation=for_simulation)
